//! Run configuration: a flat `key = value` text format.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored. Keys may appear at most once. Unknown keys are
//! rejected with their line number, as are malformed values. Every key
//! except `mode` (and, in degiorgi mode, the ball position and radius)
//! has a default.
//!
//! Keys shared by all modes:
//!   mode              simulate | verify | mms | degiorgi | heatpot
//!   cells             grid resolution per side (default 64)
//!   out               output directory (default `veinlab-out`)
//!   seed              seed for randomized probe placement (default 42)
//!   alpha beta gamma eps_reg v_min r_exp delta_exp
//!                     model parameters (defaults 1, 1, 1, 0, 1, 2, 2.5)
//!   solver_tol        CG relative residual target (default 1e-10)
//!   solver_max_iters  CG iteration cap (default 50000)
//!
//! Simulation keys (also used when degiorgi mode has no input fields):
//!   t_final dt snapshot_stride
//!   source            gaussian | zero | file     (file needs source_file)
//!   m0                default | zero | files     (files needs m0_file1/2)
//!
//! Mode-specific keys: `case` and `grids` (mms); `ball_x ball_y ball_r
//! levels k_scale m_file1 m_file2 p_file` (degiorgi); `substeps hp_levels
//! trunc_sigmas forcing ladder_points eps_hat c_hat` (heatpot).

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::elliptic::SolverOptions;
use crate::error::{Error, Result};
use crate::model::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Verify,
    Mms,
    Degiorgi,
    Heatpot,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "simulate" => Some(Mode::Simulate),
            "verify" => Some(Mode::Verify),
            "mms" => Some(Mode::Mms),
            "degiorgi" => Some(Mode::Degiorgi),
            "heatpot" => Some(Mode::Heatpot),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Verify => "verify",
            Mode::Mms => "mms",
            Mode::Degiorgi => "degiorgi",
            Mode::Heatpot => "heatpot",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Analytic source profiles selectable by name.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// The default centered Gaussian.
    Gaussian,
    Zero,
    File(PathBuf),
}

/// Initial conductance selectable by name or loaded from two snapshots.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Default,
    Zero,
    Files(PathBuf, PathBuf),
}

/// Which manufactured case an mms run refines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseName {
    Trig,
    Quadratic,
    Linear,
    OneD,
}

/// Forcing driving a heatpot run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatForcing {
    /// Stationary windowed bump in the first component.
    Bump,
    /// Forcing of the conductance equation at the end state of a
    /// simulation with this config, held fixed in time.
    Simulation,
}

/// Saved fields a degiorgi run profiles instead of simulating.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldInputs {
    pub m_file1: PathBuf,
    pub m_file2: PathBuf,
    pub p_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub cells: usize,
    pub params: Params,
    pub solver: SolverOptions,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub t_final: f64,
    pub dt: Option<f64>,
    pub snapshot_stride: usize,
    pub source: SourceSpec,
    pub m0: InitialSpec,
    pub case: CaseName,
    pub grids: Vec<usize>,
    pub ball: Option<(f64, f64, f64)>,
    pub levels: usize,
    pub k_scale: Option<f64>,
    pub fields: Option<FieldInputs>,
    pub substeps: usize,
    pub hp_levels: Option<usize>,
    pub trunc_sigmas: f64,
    pub forcing: HeatForcing,
    pub ladder_points: usize,
    pub eps_hat: f64,
    pub c_hat: f64,
}

/// One parsed `key = value` occurrence.
struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Table<'a> {
    path: &'a str,
    entries: HashMap<String, Entry>,
}

impl<'a> Table<'a> {
    fn err(&self, line: usize, msg: String) -> Error {
        Error::Config {
            path: self.path.to_string(),
            line,
            msg,
        }
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.err(line, format!("key `{key}` needs {what}: {e}"))),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse::<f64>(key, "a number")?.unwrap_or(default))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse::<usize>(key, "a nonnegative integer")?.unwrap_or(default))
    }

    fn unused_key_error(&self) -> Option<Error> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.used)
            .min_by_key(|(_, e)| e.line)
            .map(|(k, e)| self.err(e.line, format!("unknown key `{k}`")))
    }
}

fn split_line(raw: &str) -> Option<(&str, &str)> {
    let body = match raw.find('#') {
        Some(pos) => &raw[..pos],
        None => raw,
    };
    if body.trim().is_empty() {
        return None;
    }
    let eq = body.find('=')?;
    Some((body[..eq].trim(), body[eq + 1..].trim()))
}

fn tabulate<'a>(text: &str, path: &'a str) -> Result<Table<'a>> {
    let mut entries: HashMap<String, Entry> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed_nonempty = {
            let body = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            !body.trim().is_empty()
        };
        match split_line(raw) {
            None if !trimmed_nonempty => continue,
            None => {
                return Err(Error::Config {
                    path: path.to_string(),
                    line,
                    msg: format!("expected `key = value`, got `{}`", raw.trim()),
                })
            }
            Some((key, value)) => {
                if key.is_empty() {
                    return Err(Error::Config {
                        path: path.to_string(),
                        line,
                        msg: "empty key".into(),
                    });
                }
                if let Some(prev) = entries.get(key) {
                    return Err(Error::Config {
                        path: path.to_string(),
                        line,
                        msg: format!("duplicate key `{key}` (first set on line {})", prev.line),
                    });
                }
                entries.insert(
                    key.to_string(),
                    Entry {
                        line,
                        value: value.to_string(),
                        used: false,
                    },
                );
            }
        }
    }
    Ok(Table { path, entries })
}

/// Read and validate a run configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &path.display().to_string())
}

pub fn parse_config_str(text: &str, path: &str) -> Result<RunConfig> {
    let mut t = tabulate(text, path)?;

    let mode = match t.take("mode") {
        None => {
            return Err(Error::MissingKey {
                key: "mode",
                mode: "any".into(),
            })
        }
        Some((line, raw)) => Mode::parse(&raw).ok_or_else(|| {
            t.err(
                line,
                format!("key `mode` must be one of simulate, verify, mms, degiorgi, heatpot; got `{raw}`"),
            )
        })?,
    };

    let cells = t.usize_or("cells", 64)?;
    let seed = t.parse::<u64>("seed", "an unsigned integer")?.unwrap_or(42);
    let out_dir = PathBuf::from(
        t.take("out")
            .map(|(_, v)| v)
            .unwrap_or_else(|| "veinlab-out".to_string()),
    );

    let defaults = Params::default();
    let params = Params {
        alpha: t.f64_or("alpha", defaults.alpha)?,
        beta: t.f64_or("beta", defaults.beta)?,
        gamma: t.f64_or("gamma", defaults.gamma)?,
        eps_reg: t.f64_or("eps_reg", defaults.eps_reg)?,
        v_min: t.f64_or("v_min", defaults.v_min)?,
        r_exp: t.f64_or("r_exp", defaults.r_exp)?,
        delta_exp: t.f64_or("delta_exp", defaults.delta_exp)?,
    };

    let solver_defaults = SolverOptions::default();
    let solver = SolverOptions {
        rel_tol: t.f64_or("solver_tol", solver_defaults.rel_tol)?,
        max_iters: t.usize_or("solver_max_iters", solver_defaults.max_iters)?,
    };

    let t_final = t.f64_or("t_final", 0.25)?;
    let dt = t.parse::<f64>("dt", "a number")?;
    let snapshot_stride = t.usize_or("snapshot_stride", 0)?;

    let source = match t.take("source") {
        None => SourceSpec::Gaussian,
        Some((line, raw)) => match raw.as_str() {
            "gaussian" => SourceSpec::Gaussian,
            "zero" => SourceSpec::Zero,
            "file" => match t.take("source_file") {
                Some((_, p)) => SourceSpec::File(PathBuf::from(p)),
                None => {
                    return Err(t.err(line, "source = file needs `source_file`".into()))
                }
            },
            other => {
                return Err(t.err(
                    line,
                    format!("key `source` must be gaussian, zero, or file; got `{other}`"),
                ))
            }
        },
    };

    let m0 = match t.take("m0") {
        None => InitialSpec::Default,
        Some((line, raw)) => match raw.as_str() {
            "default" => InitialSpec::Default,
            "zero" => InitialSpec::Zero,
            "files" => {
                let f1 = t.take("m0_file1");
                let f2 = t.take("m0_file2");
                match (f1, f2) {
                    (Some((_, a)), Some((_, b))) => {
                        InitialSpec::Files(PathBuf::from(a), PathBuf::from(b))
                    }
                    _ => {
                        return Err(
                            t.err(line, "m0 = files needs `m0_file1` and `m0_file2`".into())
                        )
                    }
                }
            }
            other => {
                return Err(t.err(
                    line,
                    format!("key `m0` must be default, zero, or files; got `{other}`"),
                ))
            }
        },
    };

    let case = match t.take("case") {
        None => CaseName::Trig,
        Some((line, raw)) => match raw.as_str() {
            "trig" => CaseName::Trig,
            "quadratic" => CaseName::Quadratic,
            "linear" => CaseName::Linear,
            "one_d" => CaseName::OneD,
            other => {
                return Err(t.err(
                    line,
                    format!("key `case` must be trig, quadratic, linear, or one_d; got `{other}`"),
                ))
            }
        },
    };

    let grids = match t.take("grids") {
        None => vec![16, 32, 64],
        Some((line, raw)) => {
            let mut out = Vec::new();
            for part in raw.split(',') {
                let n: usize = part.trim().parse().map_err(|e| {
                    t.err(line, format!("key `grids` needs comma-separated integers: {e}"))
                })?;
                out.push(n);
            }
            if out.len() < 2 || out.windows(2).any(|w| w[1] <= w[0]) {
                return Err(t.err(
                    line,
                    "key `grids` needs at least two strictly increasing sizes".into(),
                ));
            }
            out
        }
    };

    let ball = {
        let bx = t.parse::<f64>("ball_x", "a number")?;
        let by = t.parse::<f64>("ball_y", "a number")?;
        let br = t.parse::<f64>("ball_r", "a number")?;
        match (bx, by, br) {
            (None, None, None) => None,
            (Some(x), Some(y), Some(r)) => Some((x, y, r)),
            _ => {
                let key = if bx.is_none() {
                    "ball_x"
                } else if by.is_none() {
                    "ball_y"
                } else {
                    "ball_r"
                };
                return Err(Error::MissingKey {
                    key,
                    mode: mode.name().into(),
                });
            }
        }
    };
    let levels = t.usize_or("levels", crate::verify::DEFAULT_LEVELS)?;
    let k_scale = t.parse::<f64>("k_scale", "a number")?;

    let fields = {
        let f1 = t.take("m_file1").map(|(_, v)| PathBuf::from(v));
        let f2 = t.take("m_file2").map(|(_, v)| PathBuf::from(v));
        let fp = t.take("p_file").map(|(_, v)| PathBuf::from(v));
        match (f1, f2, fp) {
            (None, None, None) => None,
            (Some(a), Some(b), Some(c)) => Some(FieldInputs {
                m_file1: a,
                m_file2: b,
                p_file: c,
            }),
            (a, b, _) => {
                let key = if a.is_none() {
                    "m_file1"
                } else if b.is_none() {
                    "m_file2"
                } else {
                    "p_file"
                };
                return Err(Error::MissingKey {
                    key,
                    mode: mode.name().into(),
                });
            }
        }
    };

    let substeps = t.usize_or("substeps", 4)?;
    let hp_levels = t.parse::<usize>("hp_levels", "a positive integer")?;
    let trunc_sigmas = t.f64_or("trunc_sigmas", 6.0)?;
    let forcing = match t.take("forcing") {
        None => HeatForcing::Bump,
        Some((line, raw)) => match raw.as_str() {
            "bump" => HeatForcing::Bump,
            "simulation" => HeatForcing::Simulation,
            other => {
                return Err(t.err(
                    line,
                    format!("key `forcing` must be bump or simulation; got `{other}`"),
                ))
            }
        },
    };
    let ladder_points = t.usize_or("ladder_points", 8)?;
    let eps_hat = t.f64_or("eps_hat", 1e-3)?;
    let c_hat = t.f64_or("c_hat", 0.0)?;

    if let Some(err) = t.unused_key_error() {
        return Err(err);
    }

    let cfg = RunConfig {
        mode,
        cells,
        params,
        solver,
        out_dir,
        seed,
        t_final,
        dt,
        snapshot_stride,
        source,
        m0,
        case,
        grids,
        ball,
        levels,
        k_scale,
        fields,
        substeps,
        hp_levels,
        trunc_sigmas,
        forcing,
        ladder_points,
        eps_hat,
        c_hat,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Check mode-required fields and value invariants. Called by the
    /// parser and again after command-line overrides.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.cells < 4 {
            return Err(Error::BadParameter {
                name: "cells",
                value: self.cells as f64,
                constraint: "grid needs at least 4 cells per side".into(),
            });
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::BadParameter {
                name: "t_final",
                value: self.t_final,
                constraint: "t_final >= 0".into(),
            });
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::BadParameter {
                    name: "dt",
                    value: dt,
                    constraint: "dt > 0".into(),
                });
            }
        }
        if !(self.solver.rel_tol > 0.0 && self.solver.rel_tol < 1.0) {
            return Err(Error::BadParameter {
                name: "solver_tol",
                value: self.solver.rel_tol,
                constraint: "relative tolerance in (0, 1)".into(),
            });
        }
        match self.mode {
            Mode::Degiorgi => {
                if self.ball.is_none() {
                    return Err(Error::MissingKey {
                        key: "ball_x",
                        mode: self.mode.name().into(),
                    });
                }
                let (_, _, r) = self.ball.unwrap();
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::BadParameter {
                        name: "ball_r",
                        value: r,
                        constraint: "ball radius must be positive".into(),
                    });
                }
                if self.levels == 0 {
                    return Err(Error::BadParameter {
                        name: "levels",
                        value: 0.0,
                        constraint: "at least one truncation level".into(),
                    });
                }
            }
            Mode::Heatpot => {
                if self.ladder_points < 6 {
                    return Err(Error::BadParameter {
                        name: "ladder_points",
                        value: self.ladder_points as f64,
                        constraint: "halving ladder needs at least 6 points to span 1.5 decades"
                            .into(),
                    });
                }
                if !(self.t_final > 0.0) {
                    return Err(Error::BadParameter {
                        name: "t_final",
                        value: self.t_final,
                        constraint: "heatpot ladder needs t_final > 0".into(),
                    });
                }
            }
            Mode::Simulate | Mode::Verify | Mode::Mms => {}
        }
        Ok(())
    }

    /// Apply command-line overrides: `--mode` swaps the mode (re-checking
    /// mode-required keys), `--out` and the `VEINLAB_OUT` environment
    /// variable replace the output directory (flag wins over environment,
    /// environment wins over the config file).
    pub fn apply_overrides(
        &mut self,
        mode: Option<&str>,
        out: Option<&Path>,
        env_out: Option<&str>,
    ) -> Result<()> {
        if let Some(raw) = mode {
            self.mode = Mode::parse(raw).ok_or_else(|| Error::Config {
                path: "--mode".into(),
                line: 0,
                msg: format!(
                    "must be one of simulate, verify, mms, degiorgi, heatpot; got `{raw}`"
                ),
            })?;
        }
        if let Some(dir) = env_out {
            self.out_dir = PathBuf::from(dir);
        }
        if let Some(dir) = out {
            self.out_dir = dir.to_path_buf();
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_simulate_config_fills_defaults() {
        let cfg = parse_config_str("mode = simulate\n", "mem").unwrap();
        assert_eq!(cfg.mode, Mode::Simulate);
        assert_eq!(cfg.cells, 64);
        assert_eq!(cfg.solver.rel_tol, 1e-10);
        assert_eq!(cfg.params.v_min, 1.0);
        assert_eq!(cfg.params.r_exp, 2.0);
        assert_eq!(cfg.params.delta_exp, 2.5);
        assert_eq!(cfg.dt, None);
        assert_eq!(cfg.source, SourceSpec::Gaussian);
        assert_eq!(cfg.m0, InitialSpec::Default);
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "\n# a run\n  mode=verify   # trailing\n\n  seed =  7\n";
        let cfg = parse_config_str(text, "mem").unwrap();
        assert_eq!(cfg.mode, Mode::Verify);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys_with_lines() {
        let err = parse_config_str("mode = verify\nbogus = 3\n", "cfg.txt").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.txt:2") && msg.contains("bogus"), "{msg}");

        let err = parse_config_str("mode = verify\nseed = 1\nseed = 2\n", "cfg.txt").unwrap_err();
        assert!(err.to_string().contains("duplicate key `seed`"), "{err}");

        let err = parse_config_str("mode = verify\nnot a pair\n", "cfg.txt").unwrap_err();
        assert!(err.to_string().contains("cfg.txt:2"), "{err}");
    }

    #[test]
    fn small_gamma_is_rejected_at_parse_time() {
        let err = parse_config_str("mode = simulate\ngamma = 0.4\n", "mem").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("gamma") && msg.contains("1/2"),
            "message must cite the relaxation exponent hypothesis: {msg}"
        );
    }

    #[test]
    fn degiorgi_needs_a_ball() {
        let err = parse_config_str("mode = degiorgi\n", "mem").unwrap_err();
        assert!(matches!(err, Error::MissingKey { key: "ball_x", .. }), "{err}");

        let err =
            parse_config_str("mode = degiorgi\nball_x = 0.5\nball_y = 0.5\n", "mem").unwrap_err();
        assert!(matches!(err, Error::MissingKey { key: "ball_r", .. }), "{err}");

        let cfg = parse_config_str(
            "mode = degiorgi\nball_x = 0.5\nball_y = 0.5\nball_r = 0.2\n",
            "mem",
        )
        .unwrap();
        assert_eq!(cfg.ball, Some((0.5, 0.5, 0.2)));
        assert_eq!(cfg.levels, crate::verify::DEFAULT_LEVELS);
    }

    #[test]
    fn grids_list_and_case_parse() {
        let cfg = parse_config_str(
            "mode = mms\ncase = quadratic\ngrids = 8, 16, 32\n",
            "mem",
        )
        .unwrap();
        assert_eq!(cfg.case, CaseName::Quadratic);
        assert_eq!(cfg.grids, vec![8, 16, 32]);

        let err = parse_config_str("mode = mms\ngrids = 32, 16\n", "mem").unwrap_err();
        assert!(err.to_string().contains("increasing"), "{err}");
    }

    #[test]
    fn file_backed_specs_require_paths() {
        let err = parse_config_str("mode = simulate\nsource = file\n", "mem").unwrap_err();
        assert!(err.to_string().contains("source_file"), "{err}");

        let cfg = parse_config_str(
            "mode = simulate\nsource = file\nsource_file = s.csv\nm0 = files\n\
             m0_file1 = a.csv\nm0_file2 = b.csv\n",
            "mem",
        )
        .unwrap();
        assert_eq!(cfg.source, SourceSpec::File(PathBuf::from("s.csv")));
        assert_eq!(
            cfg.m0,
            InitialSpec::Files(PathBuf::from("a.csv"), PathBuf::from("b.csv"))
        );
    }

    #[test]
    fn overrides_follow_flag_env_file_precedence() {
        let mut cfg = parse_config_str("mode = verify\nout = from-file\n", "mem").unwrap();
        cfg.apply_overrides(None, None, Some("from-env")).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("from-env"));

        let mut cfg = parse_config_str("mode = verify\nout = from-file\n", "mem").unwrap();
        cfg.apply_overrides(None, Some(Path::new("from-flag")), Some("from-env"))
            .unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("from-flag"));

        // Switching to degiorgi without a ball must fail at override time.
        let mut cfg = parse_config_str("mode = verify\n", "mem").unwrap();
        assert!(cfg.apply_overrides(Some("degiorgi"), None, None).is_err());
        let mut cfg = parse_config_str("mode = verify\n", "mem").unwrap();
        assert!(cfg.apply_overrides(Some("warp"), None, None).is_err());
        cfg.apply_overrides(Some("mms"), None, None).unwrap();
        assert_eq!(cfg.mode, Mode::Mms);
    }

    #[test]
    fn heatpot_ladder_guard() {
        let err = parse_config_str("mode = heatpot\nladder_points = 4\n", "mem").unwrap_err();
        assert!(err.to_string().contains("1.5 decades"), "{err}");
        let cfg = parse_config_str("mode = heatpot\n", "mem").unwrap();
        assert_eq!(cfg.ladder_points, 8);
        assert_eq!(cfg.substeps, 4);
        assert_eq!(cfg.trunc_sigmas, 6.0);
        assert_eq!(cfg.forcing, HeatForcing::Bump);
    }
}
