//! Run configuration: flat `key = value` text, `#` comments, every module
//! precondition checked at parse time so commands start from a valid state.
//!
//! Unknown and duplicate keys are hard errors with line numbers; so is the
//! first malformed value. Optional keys are materialized to their defaults
//! at parse time, and `canonical_echo` writes the fully resolved config in a
//! fixed key order for the output-directory audit copy.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::groundstate::GroundStateConfig;
use crate::operators::Potential;
use crate::quadrature::MAX_STAGES;
use std::collections::HashMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub vtk: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    // domain
    pub r: f64,
    pub n_h: usize,
    // physics
    pub omega: f64,
    pub beta: f64,
    pub potential: Potential,
    /// Original text of an expression potential, kept for the config echo.
    pub potential_source: Option<String>,
    pub lambda_margin: f64,
    // time
    pub q: usize,
    pub tau: f64,
    pub t_final: f64,
    // solver
    pub eps_fp: f64,
    pub max_fp_iters: usize,
    // io
    pub output_dir: PathBuf,
    pub snapshot_stride: usize,
    pub formats: Formats,
    // ground-state flow
    pub gs: GroundStateConfig,
    // convergence experiment
    pub q_list: Vec<usize>,
    pub tau_list: Vec<f64>,
    pub ref_q: usize,
    pub ref_tau: f64,
}

const KNOWN_KEYS: &[&str] = &[
    "r",
    "n_h",
    "omega",
    "beta",
    "gamma_x",
    "gamma_y",
    "potential",
    "lambda_margin",
    "q",
    "tau",
    "t_final",
    "eps_fp",
    "max_fp_iters",
    "output_dir",
    "snapshot_stride",
    "formats",
    "gs_tol",
    "gs_max_iters",
    "gs_flow_step",
    "q_list",
    "tau_list",
    "ref_q",
    "ref_tau",
];

struct RawConfig {
    // key -> (line number, value text)
    entries: HashMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig> {
        let mut entries: HashMap<String, (usize, String)> = HashMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            let Some(eq) = content.find('=') else {
                return Err(Error::ConfigLine {
                    line,
                    msg: format!("expected `key = value`, got `{content}`"),
                });
            };
            let key = content[..eq].trim();
            let value = content[eq + 1..].trim();
            if key.is_empty() {
                return Err(Error::ConfigLine {
                    line,
                    msg: "empty key before `=`".into(),
                });
            }
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::ConfigLine {
                    line,
                    msg: format!("unknown key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(Error::ConfigLine {
                    line,
                    msg: format!("key `{key}` has no value"),
                });
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(Error::ConfigLine {
                    line,
                    msg: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
            entries.insert(key.to_string(), (line, value.to_string()));
        }
        Ok(RawConfig { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }
}

fn parse_f64(key: &str, line: usize, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::ConfigLine {
        line,
        msg: format!("key `{key}`: `{v}` is not a number"),
    })
}

fn parse_usize(key: &str, line: usize, v: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| Error::ConfigLine {
        line,
        msg: format!("key `{key}`: `{v}` is not a nonnegative integer"),
    })
}

fn fail(line: usize, msg: String) -> Error {
    Error::ConfigLine { line, msg }
}

/// Parse and fully validate a configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(text)?;

    let (l, v) = raw.required("r")?;
    let r = parse_f64("r", l, &v)?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(fail(
            l,
            format!("domain half-width r must be positive, got {r}"),
        ));
    }

    let (l, v) = raw.required("n_h")?;
    let n_h = parse_usize("n_h", l, &v)?;
    if n_h < 2 {
        return Err(fail(l, format!("n_h must be at least 2, got {n_h}")));
    }

    let (l, v) = raw.required("omega")?;
    let omega = parse_f64("omega", l, &v)?;
    if !omega.is_finite() {
        return Err(fail(l, "omega must be finite".into()));
    }

    let (l, v) = raw.required("beta")?;
    let beta = parse_f64("beta", l, &v)?;
    if !(beta >= 0.0) {
        return Err(fail(
            l,
            format!("the interaction strength beta must be nonnegative, got {beta}"),
        ));
    }

    let gamma_x = raw.take("gamma_x");
    let gamma_y = raw.take("gamma_y");
    let potential_text = raw.take("potential");
    let (potential, potential_source) = match (gamma_x, gamma_y, potential_text) {
        (Some((lx, vx)), Some((ly, vy)), None) => {
            let gx = parse_f64("gamma_x", lx, &vx)?;
            let gy = parse_f64("gamma_y", ly, &vy)?;
            if !gx.is_finite() || !gy.is_finite() {
                return Err(fail(lx, "trap frequencies must be finite".into()));
            }
            (
                Potential::AnisotropicQuadratic {
                    gamma_x: gx,
                    gamma_y: gy,
                },
                None,
            )
        }
        (None, None, Some((lp, vp))) => {
            let expr = Expr::parse(&vp).map_err(|e| fail(lp, format!("potential: {e}")))?;
            (Potential::Expression(expr), Some(vp))
        }
        (None, Some((ly, _)), None) => {
            return Err(fail(ly, "gamma_y given without gamma_x".into()));
        }
        (Some((lx, _)), None, None) => {
            return Err(fail(lx, "gamma_x given without gamma_y".into()));
        }
        (None, None, None) => {
            return Err(Error::Config(
                "missing potential: set gamma_x and gamma_y, or a potential expression".into(),
            ));
        }
        (_, _, Some((lp, _))) => {
            return Err(fail(
                lp,
                "set either gamma_x/gamma_y or a potential expression, not both".into(),
            ));
        }
    };

    let lambda_margin = match raw.take("lambda_margin") {
        Some((l, v)) => {
            let x = parse_f64("lambda_margin", l, &v)?;
            if !(x >= 0.0) || !x.is_finite() {
                return Err(fail(l, format!("lambda_margin must be >= 0, got {x}")));
            }
            x
        }
        None => 0.2,
    };

    let (l, v) = raw.required("q")?;
    let q = parse_usize("q", l, &v)?;
    if q < 1 || q > MAX_STAGES {
        return Err(fail(l, format!("q must be in 1..={MAX_STAGES}, got {q}")));
    }

    let (l, v) = raw.required("tau")?;
    let tau = parse_f64("tau", l, &v)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(fail(l, format!("tau must be positive, got {tau}")));
    }

    let (l, v) = raw.required("t_final")?;
    let t_final = parse_f64("t_final", l, &v)?;
    if !(t_final >= tau) || !t_final.is_finite() {
        return Err(fail(
            l,
            format!("t_final must be at least one step tau = {tau}, got {t_final}"),
        ));
    }

    let eps_fp = match raw.take("eps_fp") {
        Some((l, v)) => {
            let x = parse_f64("eps_fp", l, &v)?;
            if !(x > 0.0) {
                return Err(fail(l, format!("eps_fp must be positive, got {x}")));
            }
            x
        }
        None => 1e-12,
    };
    let max_fp_iters = match raw.take("max_fp_iters") {
        Some((l, v)) => {
            let n = parse_usize("max_fp_iters", l, &v)?;
            if n == 0 {
                return Err(fail(l, "max_fp_iters must be at least 1".into()));
            }
            n
        }
        None => 200,
    };

    let (_, v) = raw.required("output_dir")?;
    let output_dir = PathBuf::from(v);

    let snapshot_stride = match raw.take("snapshot_stride") {
        Some((l, v)) => parse_usize("snapshot_stride", l, &v)?,
        None => 0,
    };

    let formats = match raw.take("formats") {
        Some((l, v)) => {
            let mut f = Formats {
                csv: false,
                vtk: false,
            };
            for part in v.split(',') {
                match part.trim() {
                    "csv" => f.csv = true,
                    "vtk" => f.vtk = true,
                    other => {
                        return Err(fail(
                            l,
                            format!("unknown format `{other}` (known: csv, vtk)"),
                        ))
                    }
                }
            }
            f
        }
        None => Formats {
            csv: true,
            vtk: false,
        },
    };

    let mut gs = GroundStateConfig::default();
    if let Some((l, v)) = raw.take("gs_tol") {
        gs.tol = parse_f64("gs_tol", l, &v)?;
        if !(gs.tol > 0.0) {
            return Err(fail(l, format!("gs_tol must be positive, got {}", gs.tol)));
        }
    }
    if let Some((l, v)) = raw.take("gs_max_iters") {
        gs.max_iters = parse_usize("gs_max_iters", l, &v)?;
        if gs.max_iters == 0 {
            return Err(fail(l, "gs_max_iters must be at least 1".into()));
        }
    }
    if let Some((l, v)) = raw.take("gs_flow_step") {
        gs.flow_step = parse_f64("gs_flow_step", l, &v)?;
        if !(gs.flow_step > 0.0) {
            return Err(fail(
                l,
                format!("gs_flow_step must be positive, got {}", gs.flow_step),
            ));
        }
    }

    let q_list = match raw.take("q_list") {
        Some((l, v)) => {
            let mut list = Vec::new();
            for part in v.split(',') {
                let qi = parse_usize("q_list", l, part.trim())?;
                if qi < 1 || qi > MAX_STAGES {
                    return Err(fail(
                        l,
                        format!("q_list entry {qi} outside 1..={MAX_STAGES}"),
                    ));
                }
                if list.contains(&qi) {
                    return Err(fail(l, format!("q_list entry {qi} repeated")));
                }
                list.push(qi);
            }
            list
        }
        None => vec![1, 2],
    };

    let tau_list = match raw.take("tau_list") {
        Some((l, v)) => {
            let mut list = Vec::new();
            for part in v.split(',') {
                let t = parse_f64("tau_list", l, part.trim())?;
                if !(t > 0.0) {
                    return Err(fail(l, format!("tau_list entry {t} must be positive")));
                }
                if let Some(&prev) = list.last() {
                    if t >= prev {
                        return Err(fail(l, "tau_list must be strictly decreasing".into()));
                    }
                }
                list.push(t);
            }
            list
        }
        None => (3..=6).map(|i| t_final / f64::powi(2.0, i)).collect(),
    };

    let ref_q = match raw.take("ref_q") {
        Some((l, v)) => {
            let rq = parse_usize("ref_q", l, &v)?;
            if rq < 1 || rq > MAX_STAGES {
                return Err(fail(
                    l,
                    format!("ref_q must be in 1..={MAX_STAGES}, got {rq}"),
                ));
            }
            rq
        }
        None => 3,
    };

    let min_tau = tau_list.iter().copied().fold(f64::INFINITY, f64::min);
    let ref_tau = match raw.take("ref_tau") {
        Some((l, v)) => {
            let rt = parse_f64("ref_tau", l, &v)?;
            if !(rt > 0.0) {
                return Err(fail(l, format!("ref_tau must be positive, got {rt}")));
            }
            if rt > min_tau / 8.0 {
                return Err(fail(
                    l,
                    format!(
                        "ref_tau = {rt} is not at least 8x smaller than the smallest \
                         tau_list entry {min_tau}"
                    ),
                ));
            }
            rt
        }
        None => min_tau / 8.0,
    };

    debug_assert!(raw.entries.is_empty(), "unconsumed keys: {:?}", raw.entries);

    Ok(RunConfig {
        r,
        n_h,
        omega,
        beta,
        potential,
        potential_source,
        lambda_margin,
        q,
        tau,
        t_final,
        eps_fp,
        max_fp_iters,
        output_dir,
        snapshot_stride,
        formats,
        gs,
        q_list,
        tau_list,
        ref_q,
        ref_tau,
    })
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Fully resolved config in a fixed key order; parsing it back gives the
/// same configuration.
pub fn canonical_echo(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("r", cfg.r.to_string());
    kv("n_h", cfg.n_h.to_string());
    kv("omega", cfg.omega.to_string());
    kv("beta", cfg.beta.to_string());
    match (&cfg.potential, &cfg.potential_source) {
        (Potential::AnisotropicQuadratic { gamma_x, gamma_y }, _) => {
            kv("gamma_x", gamma_x.to_string());
            kv("gamma_y", gamma_y.to_string());
        }
        (Potential::Expression(_), Some(src)) => kv("potential", src.clone()),
        (Potential::Expression(_), None) => unreachable!("expression potentials keep their source"),
    }
    kv("lambda_margin", cfg.lambda_margin.to_string());
    kv("q", cfg.q.to_string());
    kv("tau", cfg.tau.to_string());
    kv("t_final", cfg.t_final.to_string());
    kv("eps_fp", cfg.eps_fp.to_string());
    kv("max_fp_iters", cfg.max_fp_iters.to_string());
    kv("output_dir", cfg.output_dir.display().to_string());
    kv("snapshot_stride", cfg.snapshot_stride.to_string());
    let mut formats = Vec::new();
    if cfg.formats.csv {
        formats.push("csv");
    }
    if cfg.formats.vtk {
        formats.push("vtk");
    }
    kv("formats", formats.join(","));
    kv("gs_tol", cfg.gs.tol.to_string());
    kv("gs_max_iters", cfg.gs.max_iters.to_string());
    kv("gs_flow_step", cfg.gs.flow_step.to_string());
    kv("q_list", join(&cfg.q_list));
    kv("tau_list", join(&cfg.tau_list));
    kv("ref_q", cfg.ref_q.to_string());
    kv("ref_tau", cfg.ref_tau.to_string());
    out
}
