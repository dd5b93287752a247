//! Flat key=value configuration. Config files and command-line flags go
//! through the same registry, so a key means the same thing in both places.
//! Lookup ignores case and treats `-`, `_` and `.` alike; echoes use the
//! canonical name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ddc_core::dgp::{DgpConfig, OracleConfig, TaxiDgpConfig};
use ddc_core::fie::{SolveMethod, SolveOptions};
use ddc_core::kernels::KernelFamily;
use ddc_core::panel::{PanelSchema, TerminalPolicy};
use ddc_core::pipeline::EstimationConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Int { min: i64 },
    Float { min: f64, max: f64, open_min: bool, open_max: bool },
    Bool,
    Choice(&'static [&'static str]),
    Text,
    FloatList,
}

use Kind::*;

const POS: Kind = Float { min: 0.0, max: f64::INFINITY, open_min: true, open_max: true };
const ANY: Kind = Float { min: f64::NEG_INFINITY, max: f64::INFINITY, open_min: true, open_max: true };

struct KeyDef {
    name: &'static str,
    default: Option<&'static str>,
    kind: Kind,
    help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, kind: Kind, help: &'static str) -> KeyDef {
    KeyDef { name, default, kind, help }
}

#[rustfmt::skip]
const KEYS: &[KeyDef] = &[
    key("config", None, Text, "key=value file read before the flags"),
    key("out", Some("out"), Text, "output directory"),
    key("seed", Some("1"), Int { min: 0 }, "master seed"),
    key("threads", Some("0"), Int { min: 0 }, "worker threads, 0 = all cores"),
    // design
    key("T", Some("1000"), Int { min: 1 }, "observations per simulated panel"),
    key("theta0", Some("-5"), ANY, "flow utility of action 0"),
    key("theta1", Some("-1"), ANY, "coefficient on x1"),
    key("theta2", Some("-2"), ANY, "coefficient on x2"),
    key("beta", Some("0.9"), Float { min: 0.0, max: 1.0, open_min: false, open_max: true }, "discount factor"),
    key("p_absorb", Some("1e-6"), Float { min: 0.0, max: 0.5, open_min: false, open_max: true }, "episodes end once the true CCP falls below this"),
    key("oracle.step", Some("0.025"), POS, "index grid spacing"),
    key("oracle.span", Some("100"), POS, "index grid half-width"),
    key("oracle.gh_nodes", Some("15"), Int { min: 2 }, "Gauss–Hermite nodes per innovation"),
    key("oracle.tol", Some("1e-10"), POS, "value iteration stopping rule"),
    key("oracle.max_iter", Some("5000"), Int { min: 1 }, "value iteration cap"),
    key("oracle.nodes", Some("101"), Int { min: 2 }, "points per axis in the exported node table"),
    // data
    key("panel", None, Text, "panel CSV (path_id,t,y,x1..xk)"),
    key("panel.terminal", Some("auto"), Choice(&["auto", "none", "all", "all_but_last"]), "which paths end for good; auto = all for taxi, all_but_last otherwise"),
    key("schema.path_id", None, Text, "path id column"),
    key("schema.t", None, Text, "period column"),
    key("schema.y", None, Text, "choice column"),
    key("schema.x", None, Text, "comma-separated state columns"),
    key("spec", Some("mc"), Choice(&["mc", "mc_const", "taxi"]), "utility specification"),
    // estimator
    key("kernel", Some("gaussian_product"), Choice(&["gaussian", "gaussian_product", "high_order_product"]), "first-stage kernel family"),
    key("kernel.order", Some("2"), Int { min: 2 }, "order of the first-stage kernel (high_order_product only)"),
    key("pss.order", Some("4"), Int { min: 2 }, "order of the average-derivative kernel"),
    key("pss.gamma", None, POS, "undersmoothing exponent, default the midpoint of its interval"),
    key("pss.standardize", Some("true"), Bool, "rescale index components inside the pair sum"),
    key("pss.leave_both_out", Some("false"), Bool, "drop both observations of a pair from its conditional means"),
    key("bw.p", None, FloatList, "CCP bandwidths (1 or k values)"),
    key("bw.phi", None, FloatList, "conditional-mean bandwidths for φ̂"),
    key("bw.m", None, FloatList, "conditional-mean bandwidths for m̂"),
    key("bw.z", None, POS, "bandwidth for regressions on p̂"),
    key("bw.xi", None, POS, "bandwidth of the basis operator"),
    key("bw.theta", None, POS, "average-derivative bandwidth"),
    key("grid_size", Some("200"), Int { min: 2 }, "p-grid points"),
    key("trunc.tol", Some("1e-4"), Float { min: 0.0, max: 1.0, open_min: true, open_max: true }, "forward-sum truncation tolerance"),
    key("trunc.l", None, Int { min: 1 }, "fixed truncation length"),
    key("p_clamp", Some("1e-6"), Float { min: 0.0, max: 0.5, open_min: true, open_max: true }, "CCP clamp"),
    key("leave_one_out", Some("false"), Bool, "leave-one-out CCPs"),
    key("fie.method", Some("auto"), Choice(&["auto", "iterate", "damped", "dense"]), "basis solver"),
    key("fie.tol", Some("1e-10"), POS, "iteration stopping rule"),
    key("fie.max_iter", Some("500"), Int { min: 1 }, "iteration cap"),
    key("fie.damping", None, Float { min: 0.0, max: 1.0, open_min: true, open_max: false }, "fixed damping for fie.method=damped"),
    key("fie.override_contraction", Some("false"), Bool, "iterate although the contraction check fails"),
    key("contraction.bins", Some("30"), Int { min: 2 }, "bins of the contraction diagnostic"),
    key("exact", Some("false"), Bool, "fitted-lead regressors under which b* solves the sample equation exactly"),
    key("z_direct", Some("false"), Bool, "build ẑ from p-conditional cell means"),
    key("known_scale", None, POS, "fix ‖θ*‖ instead of the unit norm"),
    key("max_unsupported", Some("0.5"), Float { min: 0.0, max: 1.0, open_min: false, open_max: false }, "largest share of observations allowed to lack a cell"),
    key("se.reps", Some("0"), Int { min: 0 }, "path-bootstrap replicates, 0 = none"),
    key("mtheta.points", Some("50"), Int { min: 2 }, "points per curve in mtheta_curves.csv"),
    // montecarlo
    key("reps", Some("50"), Int { min: 2 }, "Monte Carlo replications"),
    key("fixed_seed", Some("false"), Bool, "every replication reuses the master seed"),
    // taxi
    key("trips", None, Text, "trip CSV (shift_id,trip_revenue,trip_minutes); generated when absent"),
    key("taxi.time_unit", Some("5"), POS, "minutes per unit of cumulative time"),
    key("taxi.shifts", Some("150"), Int { min: 1 }, "shifts in a generated trip file"),
    key("taxi.beta", Some("0.9"), Float { min: 0.0, max: 1.0, open_min: false, open_max: true }, "generator: driver's discount factor"),
    key("taxi.theta_u", Some("0.004"), ANY, "generator: quit utility per unit of cumulative revenue"),
    key("taxi.theta_c00", Some("0"), ANY, "generator: per-period utility of continuing, constant"),
    key("taxi.theta_c01", Some("-0.0008"), ANY, "generator: per-period utility of continuing, on cumulative time"),
    key("taxi.theta_c02", Some("-0.000008"), ANY, "generator: per-period utility of continuing, on squared cumulative time"),
];

fn normalize(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace(['-', '.'], "_")
}

fn lookup(name: &str) -> Option<&'static KeyDef> {
    let n = normalize(name);
    KEYS.iter().find(|k| normalize(k.name) == n)
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

fn check(def: &KeyDef, value: &str) -> Result<(), String> {
    let bad = |why: &str| Err(format!("{} = `{value}`: {why}", def.name));
    match def.kind {
        Int { min } => match value.parse::<i64>() {
            Ok(v) if v >= min => Ok(()),
            Ok(_) => bad(&format!("must be at least {min}")),
            Err(_) => bad("not an integer"),
        },
        Float { min, max, open_min, open_max } => {
            let Ok(v) = value.parse::<f64>() else { return bad("not a number") };
            let lo_ok = if open_min { v > min } else { v >= min };
            let hi_ok = if open_max { v < max } else { v <= max };
            if !v.is_finite() {
                bad("must be finite")
            } else if lo_ok && hi_ok {
                Ok(())
            } else {
                let l = if open_min { "(" } else { "[" };
                let r = if open_max { ")" } else { "]" };
                bad(&format!("must lie in {l}{min}, {max}{r}"))
            }
        }
        Bool => parse_bool(value).map(|_| ()).ok_or(()).or_else(|_| bad("expected true or false")),
        Choice(opts) => {
            if opts.contains(&value) {
                Ok(())
            } else {
                bad(&format!("expected one of {}", opts.join(", ")))
            }
        }
        Text => Ok(()),
        FloatList => {
            for part in value.split(',') {
                match part.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() && v > 0.0 => {}
                    _ => return bad("expected comma-separated positive numbers"),
                }
            }
            Ok(())
        }
    }
}

/// Validated settings; unset optional keys are absent.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), CliError> {
        let def = lookup(name).ok_or_else(|| CliError::Config(format!("unknown key `{name}`")))?;
        let value = value.trim();
        check(def, value).map_err(CliError::Config)?;
        self.values.insert(def.name, value.to_string());
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut s = Settings::default();
        s.merge_text(&text)?;
        Ok(s)
    }

    fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| CliError::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// `--key value` and `--key=value` pairs; a bare boolean flag means true.
    /// `--config` is applied first so that flags override the file.
    pub fn from_args(args: &[String]) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let a = &args[i];
            let Some(name) = a.strip_prefix("--") else {
                return Err(CliError::Config(format!("unexpected argument `{a}`; flags take the form --key value")));
            };
            if let Some((k, v)) = name.split_once('=') {
                pairs.push((k.to_string(), v.to_string()));
                i += 1;
                continue;
            }
            let def = lookup(name).ok_or_else(|| CliError::Config(format!("unknown key `{name}`")))?;
            let next = args.get(i + 1).filter(|n| !n.starts_with("--"));
            match (def.kind, next) {
                (Bool, Some(v)) if parse_bool(v).is_some() => {
                    pairs.push((name.to_string(), v.clone()));
                    i += 2;
                }
                (Bool, _) => {
                    pairs.push((name.to_string(), "true".into()));
                    i += 1;
                }
                (_, Some(v)) => {
                    pairs.push((name.to_string(), v.clone()));
                    i += 2;
                }
                (_, None) => return Err(CliError::Config(format!("--{name} needs a value"))),
            }
        }
        let mut s = Settings::default();
        if let Some((_, path)) = pairs.iter().find(|(k, _)| normalize(k) == "config") {
            s = Settings::from_file(Path::new(path))?;
        }
        for (k, v) in &pairs {
            s.set(k, v)?;
        }
        Ok(s)
    }

    fn raw(&self, name: &'static str) -> Option<&str> {
        let def = KEYS.iter().find(|k| k.name == name).expect("registered key");
        self.values.get(name).map(String::as_str).or(def.default)
    }

    pub fn is_set(&self, name: &'static str) -> bool {
        self.values.contains_key(name)
    }

    pub fn text(&self, name: &'static str) -> Option<String> {
        self.raw(name).map(str::to_string)
    }

    pub fn path(&self, name: &'static str) -> Option<PathBuf> {
        self.raw(name).map(PathBuf::from)
    }

    pub fn f64(&self, name: &'static str) -> f64 {
        self.opt_f64(name).expect("key has a default")
    }

    pub fn opt_f64(&self, name: &'static str) -> Option<f64> {
        self.raw(name).map(|v| v.parse().expect("validated"))
    }

    pub fn int(&self, name: &'static str) -> u64 {
        self.opt_int(name).expect("key has a default")
    }

    pub fn opt_int(&self, name: &'static str) -> Option<u64> {
        self.raw(name).map(|v| v.parse().expect("validated"))
    }

    pub fn flag(&self, name: &'static str) -> bool {
        self.raw(name).and_then(parse_bool).expect("validated")
    }

    pub fn list(&self, name: &'static str) -> Option<Vec<f64>> {
        self.raw(name).map(|v| v.split(',').map(|p| p.trim().parse().expect("validated")).collect())
    }

    /// Every key with its effective value, defaults included, in registry order.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .filter(|k| k.name != "config")
            .filter_map(|k| self.raw(k.name).map(|v| (k.name, v.to_string())))
            .collect()
    }

    pub fn echo_text(&self) -> String {
        self.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn help() -> String {
        let mut out = String::from("keys (flags --key value, or key = value lines in --config):\n");
        for k in KEYS {
            let d = k.default.map(|d| format!(" [{d}]")).unwrap_or_default();
            out.push_str(&format!("  {:<26}{}{d}\n", k.name, k.help));
        }
        out
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            step: self.f64("oracle.step"),
            span: self.f64("oracle.span"),
            gh_nodes: self.int("oracle.gh_nodes") as usize,
            tol: self.f64("oracle.tol"),
            max_iter: self.int("oracle.max_iter") as usize,
        }
    }

    pub fn dgp_config(&self) -> DgpConfig {
        DgpConfig {
            theta0: self.f64("theta0"),
            theta1: self.f64("theta1"),
            theta2: self.f64("theta2"),
            beta: self.f64("beta"),
            t_obs: self.int("T") as usize,
            seed: self.int("seed"),
            p_absorb: self.f64("p_absorb"),
            oracle: self.oracle_config(),
        }
    }

    pub fn taxi_config(&self) -> TaxiDgpConfig {
        TaxiDgpConfig {
            n_shifts: self.int("taxi.shifts") as usize,
            seed: self.int("seed"),
            time_unit: self.f64("taxi.time_unit"),
            beta: self.f64("taxi.beta"),
            theta_u: self.f64("taxi.theta_u"),
            theta_c00: self.f64("taxi.theta_c00"),
            theta_c01: self.f64("taxi.theta_c01"),
            theta_c02: self.f64("taxi.theta_c02"),
            ..TaxiDgpConfig::default()
        }
    }

    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            path_id: self.text("schema.path_id"),
            t: self.text("schema.t"),
            y: self.text("schema.y"),
            x: self.text("schema.x").map(|v| v.split(',').map(|s| s.trim().to_string()).collect()),
        }
    }

    pub fn terminal_policy(&self, spec: &str) -> TerminalPolicy {
        match self.text("panel.terminal").as_deref() {
            Some("none") => TerminalPolicy::None,
            Some("all") => TerminalPolicy::All,
            Some("all_but_last") => TerminalPolicy::AllButLast,
            _ if spec == "taxi" => TerminalPolicy::All,
            _ => TerminalPolicy::AllButLast,
        }
    }

    pub fn estimation_config(&self) -> Result<EstimationConfig, CliError> {
        let order = self.int("kernel.order") as u32;
        let kernel = KernelFamily::parse(&self.text("kernel").expect("default"), order)?;
        let pss_order = self.int("pss.order") as u32;
        if pss_order % 2 != 0 || pss_order > 10 {
            return Err(CliError::Config(format!("pss.order must be even and at most 10, got {pss_order}")));
        }
        Ok(EstimationConfig {
            kernel,
            pss_order,
            pss_gamma: self.opt_f64("pss.gamma"),
            pss_standardize: self.flag("pss.standardize"),
            leave_both_out: self.flag("pss.leave_both_out"),
            bw_p: self.list("bw.p"),
            bw_phi: self.list("bw.phi"),
            bw_m: self.list("bw.m"),
            bw_z: self.opt_f64("bw.z"),
            bw_xi: self.opt_f64("bw.xi"),
            bw_theta: self.opt_f64("bw.theta"),
            grid_size: self.int("grid_size") as usize,
            trunc_tol: self.f64("trunc.tol"),
            trunc_l: self.opt_int("trunc.l").map(|v| v as usize),
            p_clamp: self.f64("p_clamp"),
            leave_one_out: self.flag("leave_one_out"),
            solve: SolveOptions {
                tol: self.f64("fie.tol"),
                max_iter: self.int("fie.max_iter") as usize,
                method: SolveMethod::parse(&self.text("fie.method").expect("default"))?,
                damping: self.opt_f64("fie.damping"),
                override_contraction: self.flag("fie.override_contraction"),
            },
            contraction_bins: self.int("contraction.bins") as usize,
            exact: self.flag("exact"),
            z_direct: self.flag("z_direct"),
            known_scale: self.opt_f64("known_scale"),
            max_unsupported: self.f64("max_unsupported"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn spellings_are_equivalent() {
        let s = Settings::from_args(&args(&["--known-scale", "2.5", "--fie.method=dense", "--t", "400", "--exact"])).unwrap();
        assert_eq!(s.opt_f64("known_scale"), Some(2.5));
        assert_eq!(s.text("fie.method").unwrap(), "dense");
        assert_eq!(s.int("T"), 400);
        assert!(s.flag("exact"));
        let s = Settings::from_args(&args(&["--fie_method", "iterate", "--pss-leave-both-out", "false"])).unwrap();
        assert_eq!(s.text("fie.method").unwrap(), "iterate");
        assert!(!s.flag("pss.leave_both_out"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for bad in [&["--bandwidth", "1"][..], &["--beta", "1.0"], &["--reps", "1"], &["--bw.p", "0.1,-2"], &["--spec", "probit"], &["stray"]] {
            let e = Settings::from_args(&args(bad)).unwrap_err();
            assert!(matches!(e, CliError::Config(_)), "{bad:?}: {e}");
        }
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.conf");
        fs::write(&f, "# comment\nseed = 9\nT = 250\nbw.p = 0.3, 0.4\n").unwrap();
        let s = Settings::from_args(&args(&["--seed", "11", "--config", f.to_str().unwrap()])).unwrap();
        assert_eq!(s.int("seed"), 11);
        assert_eq!(s.int("T"), 250);
        assert_eq!(s.list("bw.p"), Some(vec![0.3, 0.4]));
        fs::write(&f, "nonsense = 1\n").unwrap();
        assert!(Settings::from_file(&f).unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn echo_round_trips() {
        let s = Settings::from_args(&args(&["--seed", "4", "--bw.z", "0.05"])).unwrap();
        let mut back = Settings::default();
        back.merge_text(&s.echo_text()).unwrap();
        assert_eq!(back.echo(), s.echo());
        assert!(s.echo().iter().any(|(k, v)| *k == "bw.z" && v == "0.05"));
    }
}
