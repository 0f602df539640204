//! Run configuration: a flat TOML file with dotted sections plus
//! command-line overrides, resolved against the per-dimension presets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toml::de::{DeTable, DeValue};
use toml::Value;
use w2dual_core::conjugate::AdamSolverConfig;
use w2dual_core::measures::GaussianPair;
use w2dual_core::{
    task_by_name, Activation, AmortLossKind, Architecture, LineSearchMethod, SolverConfig, SolverKind,
    StopRule, TaskSpec, TrainConfig,
};

use crate::CliError;

pub const OUTPUT_ROOT_ENV: &str = "W2DUAL_OUTPUT_ROOT";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
const INLINE_GAUSSIAN: &str = "gaussian_pair:";

/// A raw value and where it came from, for error messages.
#[derive(Clone, Debug)]
pub struct Entry {
    pub value: Value,
    pub origin: String,
}

/// Raw key/value pairs in the order of precedence they were added.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn flatten_spans(table: &DeTable<'_>, prefix: &str, src: &str, out: &mut BTreeMap<String, usize>) {
    for (k, v) in table.iter() {
        let key = if prefix.is_empty() {
            k.get_ref().to_string()
        } else {
            format!("{prefix}.{}", k.get_ref())
        };
        match v.get_ref() {
            DeValue::Table(t) => flatten_spans(t, &key, src, out),
            _ => {
                out.insert(key, line_of(src, k.span().start));
            }
        }
    }
}

fn flatten_values(table: &toml::Table, prefix: &str, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten_values(t, &key, out),
            _ => out.push((key, v.clone())),
        }
    }
}

impl RawConfig {
    pub fn from_toml_str(src: &str, name: &str) -> Result<Self, CliError> {
        let located = |e: toml::de::Error| {
            let at = e.span().map(|s| format!("{name}:{}", line_of(src, s.start))).unwrap_or_else(|| name.to_string());
            CliError::Config(format!("{at}: {}", e.message().trim()))
        };
        let spanned = DeTable::parse(src).map_err(located)?;
        let mut lines = BTreeMap::new();
        flatten_spans(spanned.get_ref(), "", src, &mut lines);
        let table: toml::Table = toml::from_str(src).map_err(located)?;
        let mut flat = Vec::new();
        flatten_values(&table, "", &mut flat);
        let mut raw = RawConfig::default();
        for (key, value) in flat {
            let origin = match lines.get(&key) {
                Some(l) => format!("{name}:{l}"),
                None => name.to_string(),
            };
            raw.entries.insert(key, Entry { value, origin });
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: Value, origin: impl Into<String>) {
        self.entries.insert(key.to_string(), Entry { value, origin: origin.into() });
    }

    /// Applies a `key=value` override. The value is read as a TOML value,
    /// falling back to a bare string.
    pub fn set_override(&mut self, spec: &str) -> Result<(), CliError> {
        let origin = format!("--set {spec}");
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}: expected key=value")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Config(format!("{origin}: empty key")));
        }
        let raw = raw.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => Value::String(raw.to_string()),
        };
        self.set(key, value, origin);
        Ok(())
    }

    /// Points a validation failure at the entries it names: any key whose
    /// last segment occurs in the message.
    fn anchor(&self, e: w2dual_core::Error) -> CliError {
        let msg = match e {
            w2dual_core::Error::Config(m) => m,
            other => other.to_string(),
        };
        let hits: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| k.rsplit('.').next().is_some_and(|last| msg.contains(last)))
            .map(|(k, e)| format!("{}: `{k}`", e.origin))
            .collect();
        if hits.is_empty() {
            CliError::Config(msg)
        } else {
            CliError::Config(format!("{}: {msg}", hits.join("; ")))
        }
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }
}

fn bad(e: &Entry, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: `{key}`: {msg}", e.origin))
}

fn as_str<'a>(e: &'a Entry, key: &str) -> Result<&'a str, CliError> {
    e.value.as_str().ok_or_else(|| bad(e, key, "expected a string"))
}

fn as_bool(e: &Entry, key: &str) -> Result<bool, CliError> {
    e.value.as_bool().ok_or_else(|| bad(e, key, "expected true or false"))
}

fn as_f64(e: &Entry, key: &str) -> Result<f64, CliError> {
    match &e.value {
        Value::Float(v) => Ok(*v),
        Value::Integer(v) => Ok(*v as f64),
        _ => Err(bad(e, key, "expected a number")),
    }
}

fn as_usize(e: &Entry, key: &str) -> Result<usize, CliError> {
    match &e.value {
        Value::Integer(v) if *v >= 0 => Ok(*v as usize),
        _ => Err(bad(e, key, "expected a non-negative integer")),
    }
}

fn as_usize_list(e: &Entry, key: &str) -> Result<Vec<usize>, CliError> {
    let arr = e.value.as_array().ok_or_else(|| bad(e, key, "expected an array of integers"))?;
    arr.iter()
        .map(|v| match v {
            Value::Integer(i) if *i > 0 => Ok(*i as usize),
            _ => Err(bad(e, key, "hidden sizes must be positive integers")),
        })
        .collect()
}

pub fn parse_activation(s: &str) -> Option<Activation> {
    if let Some(slope) = s.strip_prefix("leaky_relu:") {
        return slope.parse().ok().map(Activation::LeakyRelu);
    }
    Activation::parse(s)
}

pub fn activation_name(a: Activation) -> String {
    match a {
        Activation::Elu => "elu".into(),
        Activation::Identity => "identity".into(),
        Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
    }
}

/// Resolves a registry name or an inline `gaussian_pair:dim=..,cond=..,seed=..`.
pub fn resolve_task(name: &str) -> Result<TaskSpec, CliError> {
    let Some(params) = name.strip_prefix(INLINE_GAUSSIAN) else {
        return task_by_name(name).map_err(CliError::from);
    };
    let (mut dim, mut cond, mut seed) = (2usize, 10.0f64, 0u64);
    for kv in params.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("task `{name}`: expected key=value, got `{kv}`")))?;
        let fail = || CliError::Config(format!("task `{name}`: bad value for `{k}`"));
        match k.trim() {
            "dim" => dim = v.trim().parse().map_err(|_| fail())?,
            "cond" => cond = v.trim().parse().map_err(|_| fail())?,
            "seed" => seed = v.trim().parse().map_err(|_| fail())?,
            other => return Err(CliError::Config(format!("task `{name}`: unknown parameter `{other}`"))),
        }
    }
    if dim == 0 || !(cond >= 1.0) {
        return Err(CliError::Config(format!("task `{name}`: need dim ≥ 1 and cond ≥ 1")));
    }
    let pair = GaussianPair::random(dim, cond, seed)?;
    Ok(TaskSpec::from_gaussian_pair(name, &pair)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: String,
    /// `train.seed` holds the base seed; trial `i` runs with `seed + i`.
    pub train: TrainConfig,
    pub trials: usize,
    pub out: PathBuf,
}

pub const KEYS: &[&str] = &[
    "task.name",
    "task.reversed",
    "potential.kind",
    "potential.hidden",
    "potential.activation",
    "potential.actnorm",
    "amortizer.kind",
    "amortizer.hidden",
    "amortizer.activation",
    "conjugate.mode",
    "conjugate.solver",
    "conjugate.linesearch",
    "conjugate.tol",
    "conjugate.max_iter",
    "conjugate.stop_rule",
    "conjugate.memory",
    "conjugate.tau",
    "conjugate.M",
    "conjugate.c1",
    "conjugate.c2",
    "conjugate.alpha_init",
    "conjugate.chunk",
    "conjugate.adam_lr_init",
    "conjugate.adam_lr_final",
    "amortization.loss",
    "amortization.connect_potential",
    "train.n_iters",
    "train.batch_size",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.cosine_floor",
    "train.eval_every",
    "train.eval_samples",
    "train.final_eval_samples",
    "train.checkpoint_every",
    "pretrain.enabled",
    "pretrain.n_iters",
    "pretrain.lr",
    "pretrain.batch_size",
    "pretrain.held_out",
    "run.trials",
    "run.seed",
    "run.out",
];

struct ArchParts {
    kind: String,
    hidden: Vec<usize>,
    activation: Activation,
    actnorm: bool,
}

impl ArchParts {
    fn of(a: &Architecture) -> Self {
        match a {
            Architecture::Icnn { hidden, activation, actnorm } => Self {
                kind: "icnn".into(),
                hidden: hidden.clone(),
                activation: *activation,
                actnorm: *actnorm,
            },
            Architecture::Mlp { hidden, activation } => Self {
                kind: "mlp".into(),
                hidden: hidden.clone(),
                activation: *activation,
                actnorm: false,
            },
            Architecture::InitNn { hidden, activation } => Self {
                kind: "init_nn".into(),
                hidden: hidden.clone(),
                activation: *activation,
                actnorm: false,
            },
        }
    }

    fn apply(&mut self, raw: &RawConfig, section: &str) -> Result<(), CliError> {
        let key = |k: &str| format!("{section}.{k}");
        if let Some(e) = raw.get(&key("kind")) {
            let k = as_str(e, &key("kind"))?;
            if !["icnn", "mlp", "init_nn"].contains(&k) {
                return Err(bad(e, &key("kind"), format!("unknown kind `{k}` (icnn, mlp, init_nn)")));
            }
            self.kind = k.to_string();
        }
        if let Some(e) = raw.get(&key("hidden")) {
            self.hidden = as_usize_list(e, &key("hidden"))?;
        }
        if let Some(e) = raw.get(&key("activation")) {
            let s = as_str(e, &key("activation"))?;
            self.activation = parse_activation(s)
                .ok_or_else(|| bad(e, &key("activation"), format!("unknown activation `{s}`")))?;
        }
        if let Some(e) = raw.get(&key("actnorm")) {
            self.actnorm = as_bool(e, &key("actnorm"))?;
        }
        Ok(())
    }

    fn build(self) -> Architecture {
        match self.kind.as_str() {
            "icnn" => Architecture::Icnn {
                hidden: self.hidden,
                activation: self.activation,
                actnorm: self.actnorm,
            },
            "mlp" => Architecture::Mlp {
                hidden: self.hidden,
                activation: self.activation,
            },
            _ => Architecture::InitNn {
                hidden: self.hidden,
                activation: self.activation,
            },
        }
    }
}

fn apply_conjugate(raw: &RawConfig, base: &SolverConfig) -> Result<SolverConfig, CliError> {
    let mut c = base.clone();
    if let Some(e) = raw.get("conjugate.mode") {
        c = match as_str(e, "conjugate.mode")? {
            "benchmark" => SolverConfig::benchmark(),
            "synthetic" => SolverConfig::synthetic(),
            other => return Err(bad(e, "conjugate.mode", format!("unknown mode `{other}` (benchmark, synthetic)"))),
        };
    }
    if let Some(e) = raw.get("conjugate.solver") {
        let s = as_str(e, "conjugate.solver")?;
        c.solver = SolverKind::parse(s).map_err(|err| bad(e, "conjugate.solver", err))?;
    }
    if let Some(e) = raw.get("conjugate.linesearch") {
        let s = as_str(e, "conjugate.linesearch")?;
        c.linesearch.method = LineSearchMethod::parse(s).map_err(|err| bad(e, "conjugate.linesearch", err))?;
    }
    if let Some(e) = raw.get("conjugate.tol") {
        c.tol = as_f64(e, "conjugate.tol")?;
    }
    if let Some(e) = raw.get("conjugate.max_iter") {
        c.max_iter = as_usize(e, "conjugate.max_iter")?;
    }
    if let Some(e) = raw.get("conjugate.stop_rule") {
        c.stop_rule = match as_str(e, "conjugate.stop_rule")? {
            "iterate_change" => StopRule::IterateChange,
            "grad_inf" => StopRule::GradInf,
            other => {
                return Err(bad(e, "conjugate.stop_rule", format!("unknown rule `{other}` (iterate_change, grad_inf)")))
            }
        };
    }
    if let Some(e) = raw.get("conjugate.memory") {
        c.memory = as_usize(e, "conjugate.memory")?;
    }
    if let Some(e) = raw.get("conjugate.tau") {
        c.linesearch.tau = as_f64(e, "conjugate.tau")?;
    }
    if let Some(e) = raw.get("conjugate.M") {
        c.linesearch.candidates = as_usize(e, "conjugate.M")?;
    }
    if let Some(e) = raw.get("conjugate.c1") {
        c.linesearch.c1 = as_f64(e, "conjugate.c1")?;
    }
    if let Some(e) = raw.get("conjugate.c2") {
        c.linesearch.c2 = as_f64(e, "conjugate.c2")?;
    }
    if let Some(e) = raw.get("conjugate.alpha_init") {
        c.linesearch.alpha_init = as_f64(e, "conjugate.alpha_init")?;
    }
    if let Some(e) = raw.get("conjugate.chunk") {
        let n = as_usize(e, "conjugate.chunk")?;
        c.linesearch.chunk = (n > 0).then_some(n);
    }
    if let Some(e) = raw.get("conjugate.adam_lr_init") {
        c.adam.lr_init = as_f64(e, "conjugate.adam_lr_init")?;
    }
    if let Some(e) = raw.get("conjugate.adam_lr_final") {
        c.adam.lr_final = as_f64(e, "conjugate.adam_lr_final")?;
    }
    Ok(c)
}

fn check_known(raw: &RawConfig) -> Result<(), CliError> {
    for (k, e) in &raw.entries {
        if !KEYS.contains(&k.as_str()) {
            return Err(bad(e, k, "unknown key"));
        }
    }
    Ok(())
}

/// Where relative output paths are rooted.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

pub fn rooted(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        output_root().join(p)
    }
}

impl RunConfig {
    pub fn resolve(raw: &RawConfig) -> Result<Self, CliError> {
        check_known(raw)?;
        let task = match raw.get("task.name") {
            Some(e) => as_str(e, "task.name")?.to_string(),
            None => "gauss_to_gauss_2d".to_string(),
        };
        let spec = match resolve_task(&task) {
            Ok(s) => s,
            Err(err) => {
                return Err(match raw.get("task.name") {
                    Some(e) => bad(e, "task.name", err),
                    None => err,
                })
            }
        };
        let mut t = TrainConfig::for_dim(spec.dim());
        if let Some(e) = raw.get("task.reversed") {
            t.reversed = as_bool(e, "task.reversed")?;
        }
        let mut pot = ArchParts::of(&t.potential);
        pot.apply(raw, "potential")?;
        t.potential = pot.build();
        let mut am = ArchParts::of(&t.amortizer);
        am.apply(raw, "amortizer")?;
        t.amortizer = am.build();
        t.conjugate = apply_conjugate(raw, &t.conjugate)?;
        if let Some(e) = raw.get("amortization.loss") {
            let s = as_str(e, "amortization.loss")?;
            t.amortization = AmortLossKind::parse(s).map_err(|err| bad(e, "amortization.loss", err))?;
        }
        if let Some(e) = raw.get("amortization.connect_potential") {
            t.connect_potential = as_bool(e, "amortization.connect_potential")?;
        }
        let usize_keys: [(&str, &mut usize); 6] = [
            ("train.n_iters", &mut t.n_iters),
            ("train.batch_size", &mut t.batch_size),
            ("train.eval_every", &mut t.eval_every),
            ("train.eval_samples", &mut t.eval_samples),
            ("train.final_eval_samples", &mut t.final_eval_samples),
            ("train.checkpoint_every", &mut t.checkpoint_every),
        ];
        for (k, slot) in usize_keys {
            if let Some(e) = raw.get(k) {
                *slot = as_usize(e, k)?;
            }
        }
        let f64_keys: [(&str, &mut f64); 4] = [
            ("train.lr", &mut t.lr_init),
            ("train.beta1", &mut t.adam_beta1),
            ("train.beta2", &mut t.adam_beta2),
            ("train.cosine_floor", &mut t.cosine_floor),
        ];
        for (k, slot) in f64_keys {
            if let Some(e) = raw.get(k) {
                *slot = as_f64(e, k)?;
            }
        }
        let mut pre = t.pretrain.clone().unwrap_or_default();
        let mut pre_on = t.pretrain.is_some();
        if let Some(e) = raw.get("pretrain.enabled") {
            pre_on = as_bool(e, "pretrain.enabled")?;
        }
        for (k, slot) in [
            ("pretrain.n_iters", &mut pre.n_iters),
            ("pretrain.batch_size", &mut pre.batch_size),
            ("pretrain.held_out", &mut pre.held_out),
        ] {
            if let Some(e) = raw.get(k) {
                *slot = as_usize(e, k)?;
            }
        }
        if let Some(e) = raw.get("pretrain.lr") {
            pre.lr = as_f64(e, "pretrain.lr")?;
        }
        t.pretrain = pre_on.then_some(pre);
        if let Some(e) = raw.get("run.seed") {
            t.seed = as_usize(e, "run.seed")? as u64;
        }
        let trials = match raw.get("run.trials") {
            Some(e) => as_usize(e, "run.trials")?,
            None => 3,
        };
        if trials == 0 {
            let e = raw.get("run.trials").expect("set when zero");
            return Err(bad(e, "run.trials", "need at least one trial"));
        }
        let out = match raw.get("run.out") {
            Some(e) => PathBuf::from(as_str(e, "run.out")?),
            None => PathBuf::from("runs").join(task.replace([':', ',', '='], "_")),
        };
        t.conjugate.validate().map_err(|e| raw.anchor(e))?;
        t.validate().map_err(|e| raw.anchor(e))?;
        Ok(Self {
            task,
            train: t,
            trials,
            out,
        })
    }

    /// The output directory after applying the output-root override.
    pub fn out_dir(&self) -> PathBuf {
        rooted(&self.out)
    }

    /// Every key with its resolved value; reading this back resolves to the
    /// same configuration.
    pub fn to_toml(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let quote = |v: &str| Value::String(v.to_string()).to_string();
        let list = |h: &[usize]| format!("[{}]", h.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "));
        let float = |v: f64| Value::Float(v).to_string();
        let _ = writeln!(s, "[task]\nname = {}\nreversed = {}\n", quote(&self.task), t.reversed);
        for (section, arch) in [("potential", &t.potential), ("amortizer", &t.amortizer)] {
            let p = ArchParts::of(arch);
            let _ = writeln!(s, "[{section}]");
            let _ = writeln!(s, "kind = {}", quote(&p.kind));
            let _ = writeln!(s, "hidden = {}", list(&p.hidden));
            let _ = writeln!(s, "activation = {}", quote(&activation_name(p.activation)));
            if section == "potential" {
                let _ = writeln!(s, "actnorm = {}", p.actnorm);
            }
            s.push('\n');
        }
        let c = &t.conjugate;
        let ls = &c.linesearch;
        let stop = match c.stop_rule {
            StopRule::IterateChange => "iterate_change",
            StopRule::GradInf => "grad_inf",
        };
        let AdamSolverConfig { lr_init, lr_final, .. } = c.adam;
        let _ = writeln!(s, "[conjugate]");
        let _ = writeln!(s, "solver = {}", quote(c.solver.name()));
        let _ = writeln!(s, "linesearch = {}", quote(ls.method.name()));
        let _ = writeln!(s, "tol = {}", float(c.tol));
        let _ = writeln!(s, "max_iter = {}", c.max_iter);
        let _ = writeln!(s, "stop_rule = {}", quote(stop));
        let _ = writeln!(s, "memory = {}", c.memory);
        let _ = writeln!(s, "tau = {}", float(ls.tau));
        let _ = writeln!(s, "M = {}", ls.candidates);
        let _ = writeln!(s, "c1 = {}", float(ls.c1));
        let _ = writeln!(s, "c2 = {}", float(ls.c2));
        let _ = writeln!(s, "alpha_init = {}", float(ls.alpha_init));
        let _ = writeln!(s, "chunk = {}", ls.chunk.unwrap_or(0));
        let _ = writeln!(s, "adam_lr_init = {}", float(lr_init));
        let _ = writeln!(s, "adam_lr_final = {}\n", float(lr_final));
        let _ = writeln!(s, "[amortization]");
        let _ = writeln!(s, "loss = {}", quote(t.amortization.name()));
        let _ = writeln!(s, "connect_potential = {}\n", t.connect_potential);
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "n_iters = {}", t.n_iters);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {}", float(t.lr_init));
        let _ = writeln!(s, "beta1 = {}", float(t.adam_beta1));
        let _ = writeln!(s, "beta2 = {}", float(t.adam_beta2));
        let _ = writeln!(s, "cosine_floor = {}", float(t.cosine_floor));
        let _ = writeln!(s, "eval_every = {}", t.eval_every);
        let _ = writeln!(s, "eval_samples = {}", t.eval_samples);
        let _ = writeln!(s, "final_eval_samples = {}", t.final_eval_samples);
        let _ = writeln!(s, "checkpoint_every = {}\n", t.checkpoint_every);
        let pre = t.pretrain.clone().unwrap_or_default();
        let _ = writeln!(s, "[pretrain]");
        let _ = writeln!(s, "enabled = {}", t.pretrain.is_some());
        let _ = writeln!(s, "n_iters = {}", pre.n_iters);
        let _ = writeln!(s, "lr = {}", float(pre.lr));
        let _ = writeln!(s, "batch_size = {}", pre.batch_size);
        let _ = writeln!(s, "held_out = {}\n", pre.held_out);
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "out = {}", quote(&self.out.to_string_lossy()));
        s
    }

    /// The training config of trial `i`.
    pub fn trial(&self, i: usize) -> TrainConfig {
        TrainConfig {
            seed: self.train.seed + i as u64,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_task_dimension() {
        let c = RunConfig::resolve(&RawConfig::default()).unwrap();
        assert_eq!(c.task, "gauss_to_gauss_2d");
        assert_eq!(c.train, TrainConfig::synthetic());
        assert_eq!(c.trials, 3);
        let mut raw = RawConfig::default();
        raw.set_override("task.name=gauss_to_gauss_8d").unwrap();
        let c = RunConfig::resolve(&raw).unwrap();
        assert_eq!(c.train, TrainConfig::benchmark(8));
    }

    #[test]
    fn round_trip_through_text() {
        let src = "[task]\nname = \"moons\"\n[potential]\nhidden = [16, 8]\nactivation = \"leaky_relu:0.1\"\n\
                   [conjugate]\nsolver = \"adam\"\ntol = 1e-4\nchunk = 4\n[train]\nn_iters = 7\n";
        let c = RunConfig::resolve(&RawConfig::from_toml_str(src, "a.toml").unwrap()).unwrap();
        assert_eq!(c.train.potential.hidden(), &[16, 8]);
        assert_eq!(c.train.conjugate.linesearch.chunk, Some(4));
        let again = RunConfig::resolve(&RawConfig::from_toml_str(&c.to_toml(), "b.toml").unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let src = "[task]\nname = \"moons\"\n\n[train]\nn_iter = 5\n";
        let err = RunConfig::resolve(&RawConfig::from_toml_str(src, "cfg.toml").unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.toml:5"), "{msg}");
        assert!(msg.contains("train.n_iter"), "{msg}");
    }

    #[test]
    fn type_errors_name_their_line() {
        let src = "[conjugate]\ntol = \"small\"\n";
        let err = RunConfig::resolve(&RawConfig::from_toml_str(src, "cfg.toml").unwrap()).unwrap_err();
        assert!(err.to_string().contains("cfg.toml:2"), "{err}");
    }

    #[test]
    fn syntax_errors_name_their_line() {
        let err = RawConfig::from_toml_str("[task]\nname = \n", "cfg.toml").unwrap_err();
        assert!(err.to_string().contains("cfg.toml:2"), "{err}");
    }

    #[test]
    fn validation_errors_point_at_keys() {
        let src = "[amortization]\nloss = \"regression\"\n[conjugate]\nsolver = \"none\"\n";
        let err = RunConfig::resolve(&RawConfig::from_toml_str(src, "cfg.toml").unwrap()).unwrap_err();
        assert!(err.to_string().contains("cfg.toml:4"), "{err}");
        let src = "[conjugate]\ntol = -1.0\n";
        let err = RunConfig::resolve(&RawConfig::from_toml_str(src, "cfg.toml").unwrap()).unwrap_err();
        assert!(err.to_string().contains("cfg.toml:2"), "{err}");
    }

    #[test]
    fn regression_without_solver_is_rejected() {
        let mut raw = RawConfig::default();
        raw.set_override("amortization.loss=regression").unwrap();
        raw.set_override("conjugate.solver=none").unwrap();
        assert!(matches!(RunConfig::resolve(&raw), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_parse_toml_values() {
        let mut raw = RawConfig::default();
        raw.set_override("potential.hidden=[4,4]").unwrap();
        raw.set_override("potential.kind=mlp").unwrap();
        raw.set_override("train.lr=0.01").unwrap();
        let c = RunConfig::resolve(&raw).unwrap();
        assert!(matches!(c.train.potential, Architecture::Mlp { .. }));
        assert_eq!(c.train.lr_init, 0.01);
        assert!(raw.clone().set_override("novalue").is_err());
    }

    #[test]
    fn inline_gaussian_tasks() {
        let t = resolve_task("gaussian_pair:dim=3,cond=5,seed=9").unwrap();
        assert_eq!(t.dim(), 3);
        assert!(t.ground_truth.is_some());
        assert!(resolve_task("gaussian_pair:dim=3,shape=1").is_err());
        assert!(resolve_task("no_such_task").is_err());
    }
}
