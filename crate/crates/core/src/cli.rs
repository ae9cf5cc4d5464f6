//! Run configuration, scenario dispatch and tabular output for the
//! command-line tool.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bands::{band_map, linspace, AlphaAxis, EDGE_TOL};
use crate::defect::{find_defect_modes, ModeSearch};
use crate::error::Error;
use crate::medium::{CrystalSpec, DefectSpec, Incidence, LayerProfile, Polarization};
use crate::polezero::{circle_fit, track_pairs};
use crate::scattering::{envelope, rt_direct, sweep};
use crate::supercell::convergence_table;
use crate::transfer::{structure_matrix, SpectralPoint};
use crate::verify;

pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    fn values(&self, field: &str) -> CliResult<Vec<f64>> {
        if self.points == 0 || !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(CliError::Config(format!(
                "{field}: grid needs finite lo <= hi and points >= 1"
            )));
        }
        Ok(linspace(self.lo, self.hi, self.points))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectConfig {
    pub width: f64,
    pub layers: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsBlock {
    pub k: Grid,
    #[serde(default)]
    pub alpha: Option<Grid>,
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesBlock {
    pub k_lo: f64,
    pub k_hi: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub k: Grid,
    #[serde(default)]
    pub theta: f64,
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleBlock {
    pub n: u32,
    /// Half-width of the sampling window in units of `-Im k_pole`.
    pub window_over_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoleZeroBlock {
    #[serde(default)]
    pub theta: f64,
    pub ns: Vec<u32>,
    /// Defect mode to track; the first mode in `[k_lo, k_hi]` otherwise.
    #[serde(default)]
    pub k0: Option<f64>,
    #[serde(default = "default_k_lo")]
    pub k_lo: f64,
    #[serde(default = "default_k_hi")]
    pub k_hi: f64,
    #[serde(default)]
    pub circle: Option<CircleBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupercellBlock {
    #[serde(default)]
    pub theta: f64,
    pub ns: Vec<u32>,
    #[serde(default)]
    pub k0: Option<f64>,
    #[serde(default = "default_k_lo")]
    pub k_lo: f64,
    #[serde(default = "default_k_hi")]
    pub k_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeBlock {
    pub k: Grid,
    #[serde(default)]
    pub theta: f64,
    pub n: u32,
    #[serde(default = "default_reps")]
    pub repetitions: Vec<u32>,
}

fn default_k_lo() -> f64 {
    0.05
}

fn default_k_hi() -> f64 {
    6.0
}

fn default_reps() -> Vec<u32> {
    vec![1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub edge_tol: Option<f64>,
    #[serde(default)]
    pub bisect_tol: Option<f64>,
    #[serde(default)]
    pub secant_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cell: Vec<(f64, f64)>,
    pub defect: DefectConfig,
    #[serde(default = "default_pol")]
    pub polarization: Polarization,
    #[serde(default)]
    pub slices_per_period: Option<usize>,
    #[serde(default)]
    pub bands: Option<BandsBlock>,
    #[serde(default)]
    pub modes: Option<ModesBlock>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub polezero: Option<PoleZeroBlock>,
    #[serde(default)]
    pub supercell: Option<SupercellBlock>,
    #[serde(default)]
    pub envelope: Option<EnvelopeBlock>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_pol() -> Polarization {
    Polarization::EPar
}

fn subdivide(layers: &[(f64, f64)], slices: usize) -> Vec<(f64, f64)> {
    layers
        .iter()
        .flat_map(|&(d, eps)| std::iter::repeat_n((d / slices as f64, eps), slices))
        .collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn crystal(&self) -> CliResult<CrystalSpec> {
        let slices = self.slices_per_period.unwrap_or(1);
        if slices == 0 {
            return Err(CliError::Config(
                "slices_per_period: must be at least 1".into(),
            ));
        }
        let cell = LayerProfile::new(&subdivide(&self.cell, slices))
            .map_err(|e| CliError::Config(format!("cell: {e}")))?;
        let defect = DefectSpec::new(self.defect.width, &subdivide(&self.defect.layers, slices))
            .map_err(|e| CliError::Config(format!("defect: {e}")))?;
        crate::medium::validate_crystal(&cell, &defect)
            .map_err(|e| CliError::Config(format!("cell: {e}")))
    }

    fn edge_tol(&self) -> f64 {
        self.tolerances.edge_tol.unwrap_or(EDGE_TOL)
    }

    fn mode_search(&self) -> ModeSearch {
        let mut m = ModeSearch::default();
        if let Some(t) = self.tolerances.bisect_tol {
            m.bisect_tol = t;
        }
        if let Some(t) = self.tolerances.secant_tol {
            m.secant_tol = t;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Bands,
    Modes,
    Sweep,
    Polezero,
    Supercell,
    Envelope,
    Verify,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(x) => format!("{x:.16e}"),
            Cell::I(i) => i.to_string(),
            Cell::S(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::I(i) => Value::from(*i),
            Cell::S(s) => Value::from(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

fn opt(x: Option<f64>) -> Cell {
    x.map_or(Cell::Empty, Cell::F)
}

/// Rows in grid order under fixed column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = self.columns.join(",");
                out.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                    let _ = writeln!(out, "{}", cells.join(","));
                }
                out
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: Map<String, Value> = self
                            .columns
                            .iter()
                            .zip(row)
                            .map(|(c, v)| (c.to_string(), v.json()))
                            .collect();
                        Value::Object(obj)
                    })
                    .collect();
                let mut s = serde_json::to_string_pretty(&Value::Array(rows)).unwrap_or_default();
                s.push('\n');
                s
            }
        }
    }
}

fn block<'a, T>(b: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    b.as_ref()
        .ok_or_else(|| CliError::Config(format!("{name}: block missing from config")))
}

fn theta_incidence(theta: f64, field: &str) -> CliResult<Incidence> {
    Incidence::fixed_theta(theta).map_err(|e| CliError::Config(format!("{field}: {e}")))
}

fn first_mode(
    spec: &CrystalSpec,
    cfg: &RunConfig,
    theta: f64,
    k_lo: f64,
    k_hi: f64,
    field: &str,
) -> CliResult<f64> {
    let inc = theta_incidence(theta, field)?;
    let scan = find_defect_modes(spec, inc, k_lo, k_hi, cfg.polarization, &cfg.mode_search())?;
    scan.modes
        .first()
        .map(|m| m.k0)
        .ok_or_else(|| CliError::Numerical(format!("{field}: no defect mode in [{k_lo}, {k_hi}]")))
}

/// Executes one scenario. `notes` collects warnings for the manifest.
pub fn run_scenario(
    scenario: Scenario,
    cfg: &RunConfig,
    notes: &mut Vec<String>,
) -> CliResult<Table> {
    let spec = cfg.crystal()?;
    let pol = cfg.polarization;
    match scenario {
        Scenario::Bands => {
            let b = block(&cfg.bands, "bands")?;
            let ks = b.k.values("bands.k")?;
            let axis = match (&b.alpha, b.theta) {
                (Some(g), None) => AlphaAxis::Values(g.values("bands.alpha")?),
                (None, Some(t)) => {
                    theta_incidence(t, "bands.theta")?;
                    AlphaAxis::Theta(t)
                }
                (None, None) => AlphaAxis::Values(vec![0.0]),
                _ => {
                    return Err(CliError::Config(
                        "bands: give either alpha or theta, not both".into(),
                    ))
                }
            };
            let pts = band_map(&spec, &ks, &axis, pol, cfg.edge_tol())?;
            Ok(Table {
                columns: vec!["k", "alpha", "trace", "class"],
                rows: pts
                    .iter()
                    .map(|p| {
                        vec![
                            Cell::F(p.k),
                            Cell::F(p.alpha),
                            Cell::F(p.trace),
                            Cell::S(p.class.as_str().into()),
                        ]
                    })
                    .collect(),
            })
        }
        Scenario::Modes => {
            let b = block(&cfg.modes, "modes")?;
            let inc = match (b.theta, b.alpha) {
                (Some(t), None) => theta_incidence(t, "modes.theta")?,
                (None, Some(a)) => Incidence::fixed_alpha(a)
                    .map_err(|e| CliError::Config(format!("modes.alpha: {e}")))?,
                (None, None) => Incidence::FixedTheta(0.0),
                _ => {
                    return Err(CliError::Config(
                        "modes: give either alpha or theta, not both".into(),
                    ))
                }
            };
            if !(b.k_lo > 0.0 && b.k_hi > b.k_lo) {
                return Err(CliError::Config("modes: need 0 < k_lo < k_hi".into()));
            }
            let scan = find_defect_modes(&spec, inc, b.k_lo, b.k_hi, pol, &cfg.mode_search())?;
            notes.extend(scan.warnings.iter().cloned());
            Ok(Table {
                columns: vec!["k0", "alpha0", "theta0", "gap_index", "residual"],
                rows: scan
                    .modes
                    .iter()
                    .map(|m| {
                        vec![
                            Cell::F(m.k0),
                            Cell::F(m.alpha0),
                            opt(m.theta0),
                            Cell::I(m.gap_index as i64),
                            Cell::F(m.residual),
                        ]
                    })
                    .collect(),
            })
        }
        Scenario::Sweep => {
            let b = block(&cfg.sweep, "sweep")?;
            theta_incidence(b.theta, "sweep.theta")?;
            let rows = sweep(&spec, b.theta, b.n, &b.k.values("sweep.k")?, pol)?;
            Ok(Table {
                columns: vec![
                    "k",
                    "theta",
                    "n",
                    "re_r",
                    "im_r",
                    "re_t",
                    "im_t",
                    "abs_r",
                    "abs_t",
                    "energy_residual",
                    "envelope",
                ],
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            Cell::F(r.k),
                            Cell::F(r.theta),
                            Cell::I(r.n as i64),
                            Cell::F(r.r.re),
                            Cell::F(r.r.im),
                            Cell::F(r.t.re),
                            Cell::F(r.t.im),
                            Cell::F(r.r.norm()),
                            Cell::F(r.t.norm()),
                            Cell::F(r.energy_residual),
                            opt(r.envelope),
                        ]
                    })
                    .collect(),
            })
        }
        Scenario::Polezero => {
            let b = block(&cfg.polezero, "polezero")?;
            let k0 = match b.k0 {
                Some(k) => k,
                None => first_mode(&spec, cfg, b.theta, b.k_lo, b.k_hi, "polezero")?,
            };
            theta_incidence(b.theta, "polezero.theta")?;
            let rows = track_pairs(&spec, b.theta, k0, &b.ns, pol)?;
            if let Some(c) = &b.circle {
                let pair = crate::polezero::find_pair(&spec, b.theta, c.n, k0, pol)?;
                match circle_fit(
                    &spec,
                    b.theta,
                    c.n,
                    k0,
                    pol,
                    c.window_over_delta * pair.delta_n,
                ) {
                    Ok(fit) => notes.push(format!(
                        "circle n={}: center {:.16e}{:+.16e}i, diameter {:.16e}, rms {:.16e}",
                        c.n, fit.center.re, fit.center.im, fit.diameter, fit.rms_residual
                    )),
                    Err(e) => notes.push(format!("circle n={}: {e}", c.n)),
                }
            }
            Ok(Table {
                columns: vec![
                    "n",
                    "re_k_zero",
                    "im_k_zero",
                    "re_k_pole",
                    "im_k_pole",
                    "delta_n",
                    "gamma_n",
                    "gamma_closed_form",
                    "winding_p",
                    "winding_q",
                ],
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            Cell::I(r.pair.n as i64),
                            Cell::F(r.pair.k_zero.re),
                            Cell::F(r.pair.k_zero.im),
                            Cell::F(r.pair.k_pole.re),
                            Cell::F(r.pair.k_pole.im),
                            Cell::F(r.pair.delta_n),
                            Cell::F(r.pair.gamma_n),
                            Cell::F(r.gamma_closed_form),
                            Cell::I(r.winding.p as i64),
                            Cell::I(r.winding.q as i64),
                        ]
                    })
                    .collect(),
            })
        }
        Scenario::Supercell => {
            let b = block(&cfg.supercell, "supercell")?;
            let inc = theta_incidence(b.theta, "supercell.theta")?;
            let k0 = match b.k0 {
                Some(k) => k,
                None => first_mode(&spec, cfg, b.theta, b.k_lo, b.k_hi, "supercell")?,
            };
            let (reports, rows) = convergence_table(&spec, &b.ns, inc, k0, pol)?;
            for r in reports.iter().filter(|r| !r.other_intervals.is_empty()) {
                notes.push(format!(
                    "n={}: {} further band intervals in the bracket",
                    r.n,
                    r.other_intervals.len()
                ));
            }
            Ok(Table {
                columns: vec!["n", "k_lo", "k_hi", "width", "log_width", "predicted_slope"],
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            Cell::I(r.n as i64),
                            Cell::F(r.k_lo),
                            Cell::F(r.k_hi),
                            Cell::F(r.width),
                            Cell::F(r.log_width),
                            Cell::F(r.predicted_slope),
                        ]
                    })
                    .collect(),
            })
        }
        Scenario::Envelope => {
            let b = block(&cfg.envelope, "envelope")?;
            theta_incidence(b.theta, "envelope.theta")?;
            let ks = b.k.values("envelope.k")?;
            use rayon::prelude::*;
            let per_k: Vec<Vec<Vec<Cell>>> = ks
                .par_iter()
                .map(|&k| {
                    let pt = SpectralPoint::new(k, k * b.theta.sin(), pol);
                    let tt = structure_matrix(&spec, &pt, b.n)?;
                    let env = envelope(&tt, pt.beta0.re).ok();
                    b.repetitions
                        .iter()
                        .map(|&m| {
                            let r = rt_direct(&tt.pow(m), pt.beta0)?.r.norm();
                            Ok(vec![
                                Cell::F(k),
                                Cell::I(b.n as i64),
                                Cell::I(m as i64),
                                Cell::F(tt.trace().re),
                                Cell::F(r),
                                opt(env),
                            ])
                        })
                        .collect::<crate::error::Result<Vec<_>>>()
                })
                .collect::<crate::error::Result<_>>()?;
            Ok(Table {
                columns: vec!["k", "n", "repetitions", "trace", "abs_r", "envelope"],
                rows: per_k.into_iter().flatten().collect(),
            })
        }
        Scenario::Verify => Ok(verify_table(&verify::run_all())),
    }
}

pub fn verify_table(outcomes: &[verify::CriterionOutcome]) -> Table {
    Table {
        columns: vec!["criterion", "name", "result", "detail"],
        rows: outcomes
            .iter()
            .map(|o| {
                vec![
                    Cell::I(o.id as i64),
                    Cell::S(o.name.into()),
                    Cell::S(if o.passed { "PASS" } else { "FAIL" }.into()),
                    Cell::S(o.detail.clone()),
                ]
            })
            .collect(),
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: Scenario,
    pub output: String,
    pub config: Option<&'a RunConfig>,
    pub notes: &'a [String],
    pub wall_time_seconds: f64,
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: &str = r#"{
        "cell": [[0.5, 4.0], [0.5, 1.0]],
        "defect": {"width": 0.8, "layers": [[0.8, 2.25]]},
        "polarization": "E",
        "sweep": {"k": {"lo": 1.7, "hi": 2.4, "points": 50}, "n": 10}
    }"#;

    #[test]
    fn parses_golden() {
        let cfg = RunConfig::from_json(GOLDEN).unwrap();
        assert_eq!(cfg.crystal().unwrap(), crate::medium::golden_crystal());
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = GOLDEN.replace("\"polarization\"", "\"polarisation\"");
        assert!(matches!(
            RunConfig::from_json(&bad),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn negative_thickness_names_field() {
        let bad = GOLDEN.replace("[0.5, 4.0], [0.5, 1.0]", "[-0.5, 4.0], [1.5, 1.0]");
        let err = RunConfig::from_json(&bad).unwrap().crystal().unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(
            err.to_string().contains("cell") && err.to_string().contains("thickness"),
            "{err}"
        );
    }

    #[test]
    fn slicing_does_not_change_sweep() {
        let cfg = RunConfig::from_json(GOLDEN).unwrap();
        let mut sliced = cfg.clone();
        sliced.slices_per_period = Some(3);
        let a = run_scenario(Scenario::Sweep, &cfg, &mut vec![]).unwrap();
        let b = run_scenario(Scenario::Sweep, &sliced, &mut vec![]).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            if let (Cell::F(x), Cell::F(y)) = (&ra[7], &rb[7]) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn csv_and_json_render() {
        let t = Table {
            columns: vec!["a", "b", "c"],
            rows: vec![vec![Cell::F(0.1), Cell::I(3), Cell::Empty]],
        };
        assert_eq!(t.render(Format::Csv), "a,b,c\n1.0000000000000001e-1,3,\n");
        let v: Value = serde_json::from_str(&t.render(Format::Json)).unwrap();
        assert_eq!(v[0]["a"], Value::from(0.1));
        assert!(v[0]["c"].is_null());
    }
}
