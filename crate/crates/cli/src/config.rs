//! Sectioned `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use mchks::fields::FaceAverage;
use mchks::potentials::PotentialMode;
use mchks::scenario::Preset;
use mchks::solver::{Solver, SolverConfig, SolverError};
use mchks::sources::{MobilityKind, MobilitySpec};
use mchks::{Grid2D, ModelParams, PotentialSpec};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: `{key}`: {message}")]
    Parse { line: usize, key: String, message: String },
    #[error("{assumption}: {message}")]
    Validation { assumption: String, message: String },
}

impl ConfigError {
    fn parse(line: usize, key: &str, message: impl Into<String>) -> Self {
        ConfigError::Parse {
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn validation(assumption: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            assumption: assumption.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Preset(Preset),
    /// Snapshot files for `φ`, `φ_a`, `n`, `c`; `μ` is recomputed.
    Files {
        phi: PathBuf,
        phi_a: PathBuf,
        n: PathBuf,
        c: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Steps between snapshots; 0 writes only the initial and final states.
    pub snapshot_every: usize,
    /// Steps between CSV rows.
    pub diagnostics_every: usize,
    /// Start of the separation monitor window.
    pub separation_t0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: Grid2D,
    pub params: ModelParams,
    pub solver: SolverConfig,
    /// Modes per direction for `compare`.
    pub galerkin_k: usize,
    pub initial: InitialSpec,
    pub seed: u64,
    pub output: OutputConfig,
}

const SECTIONS: [(&str, &[&str]); 5] = [
    ("grid", &["nx", "ny", "lx", "ly"]),
    (
        "params",
        &[
            "chi_phi",
            "chi_a",
            "m",
            "kappa0",
            "kappa_inf",
            "zeta",
            "delta_n",
            "delta_a",
            "eps",
            "potential",
            "c1",
            "c2",
            "c3",
            "r_star",
            "kappa",
            "mobility_m",
            "mobility_m_value",
            "mobility_m_b_phi",
            "mobility_m_lambda",
            "mobility_m_xi",
            "mobility_m_lower",
            "mobility_m_upper",
            "mobility_n",
            "mobility_n_value",
            "mobility_n_area",
            "mobility_n_friction",
            "mobility_n_lower",
            "mobility_n_upper",
        ],
    ),
    (
        "solver",
        &[
            "dt",
            "t_end",
            "newton_tol",
            "newton_max",
            "linear_tol",
            "linear_max",
            "stabilization",
            "sources_off",
            "face_average",
            "mode",
            "galerkin_k",
        ],
    ),
    (
        "initial",
        &[
            "preset", "seed", "radius", "width", "inside", "outside", "phi", "phi_a", "n", "c", "mean", "amplitude",
            "phi_file", "phi_a_file", "n_file", "c_file",
        ],
    ),
    ("output", &["dir", "snapshot_every", "diagnostics_every", "separation_t0"]),
];

/// Raw `(line, value)` entries of one section, consumed while building.
struct Section {
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ConfigError::parse(line, key, format!("expected a finite number, got `{v}`"))),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse::<usize>()
                .map_err(|_| ConfigError::parse(line, key, format!("expected a nonnegative integer, got `{v}`"))),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse::<u64>()
                .map_err(|_| ConfigError::parse(line, key, format!("expected a nonnegative integer, got `{v}`"))),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(ConfigError::parse(line, key, format!("expected true or false, got `{v}`"))),
            },
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        self.take(key).map(|(_, v)| v).unwrap_or_else(|| default.to_string())
    }

    /// Fails on keys left over after building, which do not apply to the
    /// chosen variant.
    fn finish(self, section: &str, context: &str) -> Result<(), ConfigError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(ConfigError::parse(
                line,
                &key,
                format!("key does not apply to {context} in [{section}]"),
            )),
        }
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<&'static str, Section>, ConfigError> {
    let mut out: BTreeMap<&'static str, Section> = SECTIONS
        .iter()
        .map(|(name, _)| {
            (
                *name,
                Section {
                    entries: BTreeMap::new(),
                },
            )
        })
        .collect();
    let mut seen_sections: Vec<&str> = Vec::new();
    let mut current: Option<(&'static str, &'static [&'static str])> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::parse(line, content, "unterminated section header"))?
                .trim();
            let found = SECTIONS
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| ConfigError::parse(line, name, "unknown section"))?;
            if seen_sections.contains(&found.0) {
                return Err(ConfigError::parse(line, name, "duplicate section"));
            }
            seen_sections.push(found.0);
            current = Some(*found);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| ConfigError::parse(line, content, "expected `key = value`"))?;
        let (section, allowed) =
            current.ok_or_else(|| ConfigError::parse(line, key, "key outside of any section"))?;
        if !allowed.contains(&key) {
            return Err(ConfigError::parse(line, key, format!("unknown key in [{section}]")));
        }
        if value.is_empty() {
            return Err(ConfigError::parse(line, key, "empty value"));
        }
        let sec = out.get_mut(section).expect("all sections present");
        if sec.entries.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(ConfigError::parse(line, key, "duplicate key"));
        }
    }
    Ok(out)
}

fn build_potential(s: &mut Section) -> Result<PotentialSpec, ConfigError> {
    let name = s.take("potential");
    let (line, name) = name.unwrap_or((0, "flory-huggins".into()));
    Ok(match name.as_str() {
        "flory-huggins" => PotentialSpec::FloryHuggins {
            c1: s.f64("c1", 1.0)?,
            c2: s.f64("c2", 3.0)?,
        },
        "quartic" => PotentialSpec::RegularQuartic { c3: s.f64("c3", 1.0)? },
        "double-obstacle" => PotentialSpec::DoubleObstacle { c3: s.f64("c3", 1.0)? },
        "single-well" => PotentialSpec::SingleWellLJ {
            r_star: s.f64("r_star", 0.6)?,
            kappa: s.f64("kappa", 0.0)?,
        },
        other => {
            return Err(ConfigError::parse(
                line,
                "potential",
                format!("unknown potential `{other}` (quartic, flory-huggins, double-obstacle, single-well)"),
            ))
        }
    })
}

fn potential_keyword(p: &PotentialSpec) -> &'static str {
    match p {
        PotentialSpec::RegularQuartic { .. } => "quartic",
        PotentialSpec::FloryHuggins { .. } => "flory-huggins",
        PotentialSpec::DoubleObstacle { .. } => "double-obstacle",
        PotentialSpec::SingleWellLJ { .. } => "single-well",
    }
}

fn build_mobility(s: &mut Section, prefix: &str) -> Result<MobilitySpec, ConfigError> {
    let key = |k: &str| format!("{prefix}_{k}");
    let (line, kind) = s.take(prefix).unwrap_or((0, "constant".into()));
    let spec = match kind.as_str() {
        "constant" => MobilitySpec::constant(s.f64(&key("value"), 1.0)?),
        "kozeny-carman" if prefix == "mobility_m" => {
            let b_phi = s.f64(&key("b_phi"), 1.0)?;
            let xi = s.f64(&key("xi"), 1.0)?;
            MobilitySpec {
                kind: MobilityKind::KozenyCarman {
                    b_phi,
                    lambda: s.f64(&key("lambda"), 1.0)?,
                    xi,
                },
                lower: s.f64(&key("lower"), 1e-6)?,
                upper: s.f64(&key("upper"), b_phi * xi)?,
            }
        }
        "endothelial" if prefix == "mobility_n" => {
            let area = s.f64(&key("area"), 1.0)?;
            let friction = s.f64(&key("friction"), 1.0)?;
            MobilitySpec {
                kind: MobilityKind::EndothelialProduct { area, friction },
                lower: area / friction,
                upper: area / friction,
            }
        }
        other => {
            return Err(ConfigError::parse(line, prefix, format!("unsupported mobility `{other}`")));
        }
    };
    if let MobilityKind::Constant(_) = spec.kind {
        let lower = s.f64(&key("lower"), spec.lower)?;
        let upper = s.f64(&key("upper"), spec.upper)?;
        return Ok(MobilitySpec { lower, upper, ..spec });
    }
    Ok(spec)
}

fn build_initial(s: &mut Section) -> Result<(InitialSpec, u64), ConfigError> {
    let seed = s.u64("seed", 0)?;
    let (line, preset) = s.take("preset").unwrap_or((0, "spheroid".into()));
    let spec = match preset.as_str() {
        "spheroid" => {
            let Preset::Spheroid {
                radius,
                width,
                inside,
                outside,
                phi_a,
            } = Preset::spheroid_default()
            else {
                unreachable!("spheroid default")
            };
            InitialSpec::Preset(Preset::Spheroid {
                radius: s.f64("radius", radius)?,
                width: s.f64("width", width)?,
                inside: s.f64("inside", inside)?,
                outside: s.f64("outside", outside)?,
                phi_a: s.f64("phi_a", phi_a)?,
            })
        }
        "uniform" => InitialSpec::Preset(Preset::Uniform {
            phi: s.f64("phi", 0.5)?,
            phi_a: s.f64("phi_a", 0.1)?,
            n: s.f64("n", 1.0)?,
            c: s.f64("c", 0.0)?,
        }),
        "random-perturbation" => InitialSpec::Preset(Preset::RandomPerturbation {
            mean: s.f64("mean", 0.5)?,
            amplitude: s.f64("amplitude", 0.01)?,
            phi_a: s.f64("phi_a", 0.1)?,
            n: s.f64("n", 1.0)?,
            c: s.f64("c", 0.0)?,
        }),
        "files" => {
            let mut path = |k: &str| {
                s.take(k)
                    .map(|(_, v)| PathBuf::from(v))
                    .ok_or_else(|| ConfigError::parse(line, k, "required by preset `files`"))
            };
            InitialSpec::Files {
                phi: path("phi_file")?,
                phi_a: path("phi_a_file")?,
                n: path("n_file")?,
                c: path("c_file")?,
            }
        }
        other => {
            return Err(ConfigError::parse(
                line,
                "preset",
                format!("unknown preset `{other}` (spheroid, uniform, random-perturbation, files)"),
            ))
        }
    };
    Ok((spec, seed))
}

/// Parses and fully validates a configuration. Absent keys take defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut sections = split_sections(text)?;
    let mut take = |name: &str| sections.remove(name).expect("all sections present");

    let mut g = take("grid");
    let (nx, ny) = (g.usize("nx", 64)?, g.usize("ny", 64)?);
    let (lx, ly) = (g.f64("lx", 25.6)?, g.f64("ly", 25.6)?);
    g.finish("grid", "the grid")?;
    let grid = Grid2D::new(nx, ny, lx, ly).map_err(|e| ConfigError::validation("grid", e.to_string()))?;

    let mut p = take("params");
    let d = ModelParams::default();
    let potential = build_potential(&mut p)?;
    let params = ModelParams {
        chi_phi: p.f64("chi_phi", d.chi_phi)?,
        chi_a: p.f64("chi_a", d.chi_a)?,
        m: p.f64("m", d.m)?,
        kappa0: p.f64("kappa0", d.kappa0)?,
        kappa_inf: p.f64("kappa_inf", d.kappa_inf)?,
        zeta: p.f64("zeta", d.zeta)?,
        delta_n: p.f64("delta_n", d.delta_n)?,
        delta_a: p.f64("delta_a", d.delta_a)?,
        eps: p.f64("eps", d.eps)?,
        potential,
        mobility_m: build_mobility(&mut p, "mobility_m")?,
        mobility_n: build_mobility(&mut p, "mobility_n")?,
    };
    p.finish("params", &format!("potential `{}`", potential_keyword(&potential)))?;
    params
        .validate()
        .map_err(|e| ConfigError::validation(e.hypothesis.to_string(), e.message))?;

    let mut s = take("solver");
    let ds = SolverConfig::default();
    let stabilization = match s.take("stabilization") {
        None => ds.stabilization,
        Some((_, v)) if v == "lipschitz" => params.potential.pi_lipschitz(),
        Some((line, v)) => v
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ConfigError::parse(line, "stabilization", "expected a number or `lipschitz`"))?,
    };
    let face_average = match s.take("face_average") {
        None => ds.face_average,
        Some((_, v)) if v == "arithmetic" => FaceAverage::Arithmetic,
        Some((_, v)) if v == "harmonic" => FaceAverage::Harmonic,
        Some((line, _)) => {
            return Err(ConfigError::parse(line, "face_average", "expected arithmetic or harmonic"));
        }
    };
    if let Some((line, mode)) = s.take("mode") {
        let wanted = match mode.as_str() {
            "smooth" => PotentialMode::Smooth,
            "singular" => PotentialMode::Singular,
            _ => return Err(ConfigError::parse(line, "mode", "expected smooth or singular")),
        };
        if wanted != params.mode() {
            return Err(ConfigError::validation(
                "potential splitting",
                format!("mode `{mode}` does not match potential `{}`", potential_keyword(&params.potential)),
            ));
        }
    }
    let solver = SolverConfig {
        dt: s.f64("dt", ds.dt)?,
        t_end: s.f64("t_end", ds.t_end)?,
        newton_tol: s.f64("newton_tol", ds.newton_tol)?,
        newton_max: s.usize("newton_max", ds.newton_max)?,
        linear_tol: s.f64("linear_tol", ds.linear_tol)?,
        linear_max: s.usize("linear_max", ds.linear_max)?,
        stabilization,
        sources_off: s.bool("sources_off", ds.sources_off)?,
        face_average,
    };
    let galerkin_k = s.usize("galerkin_k", 8)?;
    s.finish("solver", "the solver")?;
    solver
        .validate()
        .map_err(|e| ConfigError::validation("solver", e.to_string()))?;
    if galerkin_k > mchks::galerkin::MAX_MODE {
        return Err(ConfigError::validation(
            "solver",
            format!("galerkin_k must be at most {}", mchks::galerkin::MAX_MODE),
        ));
    }

    let mut i = take("initial");
    let (initial, seed) = build_initial(&mut i)?;
    i.finish("initial", "the chosen preset")?;
    if let InitialSpec::Preset(preset) = &initial {
        let state = preset.build(grid, seed);
        let solver = Solver::new(grid, params, solver).map_err(|e| ConfigError::validation("solver", e.to_string()))?;
        solver.validate_initial(&state).map_err(|e| match e {
            SolverError::InitialData { assumption, detail } => {
                ConfigError::validation(format!("initial data ({assumption})"), detail)
            }
            other => ConfigError::validation("initial data", other.to_string()),
        })?;
    }

    let mut o = take("output");
    let output = OutputConfig {
        dir: PathBuf::from(o.string("dir", "out")),
        snapshot_every: o.usize("snapshot_every", 0)?,
        diagnostics_every: o.usize("diagnostics_every", 1)?,
        separation_t0: o.f64("separation_t0", 0.1)?,
    };
    o.finish("output", "the output")?;
    if output.diagnostics_every == 0 {
        return Err(ConfigError::validation("output", "diagnostics_every must be positive"));
    }

    Ok(RunConfig {
        grid,
        params,
        solver,
        galerkin_k,
        initial,
        seed,
        output,
    })
}

fn mobility_lines(out: &mut String, prefix: &str, m: &MobilitySpec) -> fmt::Result {
    match m.kind {
        MobilityKind::Constant(v) => {
            writeln!(out, "{prefix} = constant")?;
            writeln!(out, "{prefix}_value = {v:?}")?;
            writeln!(out, "{prefix}_lower = {:?}", m.lower)?;
            writeln!(out, "{prefix}_upper = {:?}", m.upper)
        }
        MobilityKind::KozenyCarman { b_phi, lambda, xi } => {
            writeln!(out, "{prefix} = kozeny-carman")?;
            writeln!(out, "{prefix}_b_phi = {b_phi:?}")?;
            writeln!(out, "{prefix}_lambda = {lambda:?}")?;
            writeln!(out, "{prefix}_xi = {xi:?}")?;
            writeln!(out, "{prefix}_lower = {:?}", m.lower)?;
            writeln!(out, "{prefix}_upper = {:?}", m.upper)
        }
        MobilityKind::EndothelialProduct { area, friction } => {
            writeln!(out, "{prefix} = endothelial")?;
            writeln!(out, "{prefix}_area = {area:?}")?;
            writeln!(out, "{prefix}_friction = {friction:?}")
        }
    }
}

impl RunConfig {
    /// Fully resolved configuration text; parses back to `self`.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        self.write_text(&mut s).expect("writing to a String");
        s
    }

    fn write_text(&self, s: &mut String) -> fmt::Result {
        let g = &self.grid;
        writeln!(s, "[grid]\nnx = {}\nny = {}\nlx = {:?}\nly = {:?}\n", g.nx(), g.ny(), g.lx(), g.ly())?;
        let p = &self.params;
        writeln!(s, "[params]")?;
        writeln!(s, "potential = {}", potential_keyword(&p.potential))?;
        match p.potential {
            PotentialSpec::RegularQuartic { c3 } | PotentialSpec::DoubleObstacle { c3 } => writeln!(s, "c3 = {c3:?}")?,
            PotentialSpec::FloryHuggins { c1, c2 } => writeln!(s, "c1 = {c1:?}\nc2 = {c2:?}")?,
            PotentialSpec::SingleWellLJ { r_star, kappa } => writeln!(s, "r_star = {r_star:?}\nkappa = {kappa:?}")?,
        }
        for (k, v) in [
            ("chi_phi", p.chi_phi),
            ("chi_a", p.chi_a),
            ("m", p.m),
            ("kappa0", p.kappa0),
            ("kappa_inf", p.kappa_inf),
            ("zeta", p.zeta),
            ("delta_n", p.delta_n),
            ("delta_a", p.delta_a),
            ("eps", p.eps),
        ] {
            writeln!(s, "{k} = {v:?}")?;
        }
        mobility_lines(s, "mobility_m", &p.mobility_m)?;
        mobility_lines(s, "mobility_n", &p.mobility_n)?;
        let c = &self.solver;
        writeln!(s, "\n[solver]")?;
        writeln!(s, "dt = {:?}\nt_end = {:?}", c.dt, c.t_end)?;
        writeln!(s, "newton_tol = {:?}\nnewton_max = {}", c.newton_tol, c.newton_max)?;
        writeln!(s, "linear_tol = {:?}\nlinear_max = {}", c.linear_tol, c.linear_max)?;
        writeln!(s, "stabilization = {:?}\nsources_off = {}", c.stabilization, c.sources_off)?;
        let fa = match c.face_average {
            FaceAverage::Arithmetic => "arithmetic",
            FaceAverage::Harmonic => "harmonic",
        };
        let mode = match p.mode() {
            PotentialMode::Smooth => "smooth",
            PotentialMode::Singular => "singular",
        };
        writeln!(s, "face_average = {fa}\nmode = {mode}\ngalerkin_k = {}", self.galerkin_k)?;
        writeln!(s, "\n[initial]\nseed = {}", self.seed)?;
        match &self.initial {
            InitialSpec::Preset(Preset::Spheroid {
                radius,
                width,
                inside,
                outside,
                phi_a,
            }) => writeln!(
                s,
                "preset = spheroid\nradius = {radius:?}\nwidth = {width:?}\ninside = {inside:?}\noutside = {outside:?}\nphi_a = {phi_a:?}"
            )?,
            InitialSpec::Preset(Preset::Uniform { phi, phi_a, n, c }) => {
                writeln!(s, "preset = uniform\nphi = {phi:?}\nphi_a = {phi_a:?}\nn = {n:?}\nc = {c:?}")?
            }
            InitialSpec::Preset(Preset::RandomPerturbation {
                mean,
                amplitude,
                phi_a,
                n,
                c,
            }) => writeln!(
                s,
                "preset = random-perturbation\nmean = {mean:?}\namplitude = {amplitude:?}\nphi_a = {phi_a:?}\nn = {n:?}\nc = {c:?}"
            )?,
            InitialSpec::Files { phi, phi_a, n, c } => writeln!(
                s,
                "preset = files\nphi_file = {}\nphi_a_file = {}\nn_file = {}\nc_file = {}",
                phi.display(),
                phi_a.display(),
                n.display(),
                c.display()
            )?,
        }
        let o = &self.output;
        writeln!(
            s,
            "\n[output]\ndir = {}\nsnapshot_every = {}\ndiagnostics_every = {}\nseparation_t0 = {:?}",
            o.dir.display(),
            o.snapshot_every,
            o.diagnostics_every,
            o.separation_t0
        )
    }
}
