//! Run configuration and its flat `key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Unknown keys, repeated keys and
//! malformed values are errors. Layer keys are prefixed `layer<i>.` with `i`
//! counting from 1 up to `layers`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::abstraction::{CsmSetting, LayerConfig, ModelConfig, RumSetting};
use crate::csm::CsmVariant;
use crate::error::{Error, Result};
use crate::loss::DEFAULT_ALPHA;
use crate::param::OptimizerKind;
use crate::rum::{RumKind, DEFAULT_NEIGHBOR_CAP, DEFAULT_SHELLS};

use super::synthetic::SyntheticSpec;

/// Where the clouds come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiply the learning rate by `lr_decay` every `lr_step` epochs
    /// (`lr_step = 0` keeps it constant).
    pub lr_decay: f64,
    pub lr_step: usize,
    pub optimizer: OptimizerName,
    pub momentum: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub data: DataSource,
    /// Points per cloud; loaded clouds are resampled to this count.
    pub points: usize,
    pub layers: Vec<LayerConfig>,
    pub global_mlp: Vec<usize>,
    pub head: Vec<usize>,
    pub out: Option<PathBuf>,
}

fn default_layer(i: usize, prev: Option<&LayerConfig>) -> LayerConfig {
    let (n_centers, radius, mlp) = match (i, prev) {
        (0, _) => (128, 0.2, vec![64]),
        (1, _) => (32, 0.4, vec![128]),
        (_, Some(p)) => (
            (p.n_centers / 4).max(1),
            p.radius * 2.0,
            vec![2 * p.mlp.last().copied().unwrap_or(64)],
        ),
        (_, None) => (8, 0.8, vec![256]),
    };
    LayerConfig {
        n_centers,
        radius,
        k: 16,
        mlp,
        csm: None,
        rum: None,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let l1 = default_layer(0, None);
        let l2 = default_layer(1, Some(&l1));
        RunConfig {
            seed: 0,
            epochs: 60,
            batch_size: 16,
            lr: 0.01,
            lr_decay: 1.0,
            lr_step: 0,
            optimizer: OptimizerName::Sgd,
            momentum: 0.9,
            alpha1: DEFAULT_ALPHA,
            alpha2: DEFAULT_ALPHA,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            points: 1024,
            layers: vec![l1, l2],
            global_mlp: vec![256],
            head: vec![128],
            out: None,
        }
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad width {t:?}")))
        .collect()
}

fn fmt_list(v: &[usize]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on/off, got {s:?}")),
    }
}

/// Key/value pairs with the line each came from.
struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn get<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => parse(&v).map_err(|m| Error::parse(format!("line {line}"), format!("{key}: {m}"))),
        }
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        self.get(key, default, |v| v.parse::<T>().map_err(|_| format!("bad value {v:?}")))
    }
}

pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("line {}", i + 1), "expected `key = value`"))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (line, k, v) in parse_entries(text)? {
            if map.insert(k.clone(), (line, v)).is_some() {
                return Err(Error::parse(format!("line {line}"), format!("duplicate key {k:?}")));
            }
        }
        let mut e = Entries { map };
        let d = RunConfig::default();
        let mut cfg = RunConfig {
            seed: e.num("seed", d.seed)?,
            epochs: e.num("epochs", d.epochs)?,
            batch_size: e.num("batch_size", d.batch_size)?,
            lr: e.num("lr", d.lr)?,
            lr_decay: e.num("lr_decay", d.lr_decay)?,
            lr_step: e.num("lr_step", d.lr_step)?,
            optimizer: e.get("optimizer", d.optimizer, |v| match v {
                "sgd" => Ok(OptimizerName::Sgd),
                "adam" => Ok(OptimizerName::Adam),
                _ => Err(format!("unknown optimizer {v:?}")),
            })?,
            momentum: e.num("momentum", d.momentum)?,
            alpha1: e.num("alpha1", d.alpha1)?,
            alpha2: e.num("alpha2", d.alpha2)?,
            data: d.data.clone(),
            points: e.num("points", d.points)?,
            layers: Vec::new(),
            global_mlp: e.get("global.mlp", d.global_mlp.clone(), parse_list)?,
            head: e.get("head.mlp", d.head.clone(), parse_list)?,
            out: e.take("out").map(|(_, v)| PathBuf::from(v)),
        };
        let synth_default = SyntheticSpec::default();
        let synth = SyntheticSpec {
            classes: e.num("synthetic.classes", synth_default.classes)?,
            per_class: e.num("synthetic.per_class", synth_default.per_class)?,
            points: cfg.points,
            noise: e.num("synthetic.noise", synth_default.noise)?,
            clutter: e.get("synthetic.clutter", synth_default.clutter, parse_bool)?,
        };
        cfg.data = match e.take("data") {
            Some((_, path)) if !path.is_empty() => DataSource::File(PathBuf::from(path)),
            _ => DataSource::Synthetic(synth),
        };
        let n_layers: usize = e.num("layers", 2)?;
        for i in 0..n_layers {
            let def = default_layer(i, cfg.layers.last());
            let p = format!("layer{}.", i + 1);
            let k: usize = e.num(&format!("{p}k"), def.k)?;
            let csm_variant = e.get(&format!("{p}csm"), None, |v| match v {
                "off" | "none" => Ok(None),
                _ => v.parse::<CsmVariant>().map(Some).map_err(|err| err.to_string()),
            })?;
            let csm_k = e.num(&format!("{p}csm_k"), k)?;
            let rum_kind = e.get(&format!("{p}rum"), None, |v| match v {
                "off" | "none" => Ok(None),
                _ => v.parse::<RumKind>().map(Some).map_err(|err| err.to_string()),
            })?;
            let shells = e.num(&format!("{p}rum_shells"), DEFAULT_SHELLS)?;
            let cap = e.num(&format!("{p}rum_cap"), DEFAULT_NEIGHBOR_CAP)?;
            let scale = e.get(&format!("{p}rum_scale"), true, parse_bool)?;
            cfg.layers.push(LayerConfig {
                n_centers: e.num(&format!("{p}centers"), def.n_centers)?,
                radius: e.num(&format!("{p}radius"), def.radius)?,
                k,
                mlp: e.get(&format!("{p}mlp"), def.mlp, parse_list)?,
                csm: csm_variant.map(|variant| CsmSetting { variant, k: csm_k }),
                rum: rum_kind.map(|kind| RumSetting {
                    kind,
                    shells,
                    neighbor_cap: cap,
                    scale_by_radius: scale,
                }),
            });
        }
        if let Some((key, (line, _))) = e.map.into_iter().next() {
            return Err(Error::parse(format!("line {line}"), format!("unknown key {key:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `data` path is taken relative to the
    /// file's directory and made absolute, so the config can be saved
    /// elsewhere and still point at the same file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::parse(&std::fs::read_to_string(path)?)?;
        if let DataSource::File(p) = &cfg.data {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data = DataSource::File(std::path::absolute(base.join(p))?);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0) {
            return Err(Error::arg("lr and lr_decay must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::arg("loss weights must be non-negative"));
        }
        if self.layers.is_empty() {
            return Err(Error::arg("need at least one set abstraction layer"));
        }
        if self.points < self.layers[0].n_centers {
            return Err(Error::arg(format!(
                "{} points per cloud cannot feed {} first-layer centers",
                self.points, self.layers[0].n_centers
            )));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.model_config(2)?.validate()
    }

    pub fn model_config(&self, classes: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            layers: self.layers.clone(),
            global_mlp: self.global_mlp.clone(),
            head: self.head.clone(),
            classes,
        })
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerName::Sgd => OptimizerKind::Sgd {
                momentum: self.momentum,
            },
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.saturating_sub(1).checked_div(self.lr_step) {
            None => self.lr,
            Some(steps) => self.lr * self.lr_decay.powi(steps as i32),
        }
    }

    /// Copy with every center shift and radius update switched off.
    pub fn all_off(&self) -> Self {
        let mut c = self.clone();
        for l in &mut c.layers {
            l.csm = None;
            l.rum = None;
        }
        c
    }

    /// Canonical text form listing every key; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("lr_decay", format!("{:?}", self.lr_decay));
        kv("lr_step", self.lr_step.to_string());
        kv(
            "optimizer",
            match self.optimizer {
                OptimizerName::Sgd => "sgd".into(),
                OptimizerName::Adam => "adam".into(),
            },
        );
        kv("momentum", format!("{:?}", self.momentum));
        kv("alpha1", format!("{:?}", self.alpha1));
        kv("alpha2", format!("{:?}", self.alpha2));
        kv("points", self.points.to_string());
        match &self.data {
            DataSource::File(p) => kv("data", p.display().to_string()),
            DataSource::Synthetic(sp) => {
                kv("synthetic.classes", sp.classes.to_string());
                kv("synthetic.per_class", sp.per_class.to_string());
                kv("synthetic.noise", format!("{:?}", sp.noise));
                kv("synthetic.clutter", if sp.clutter { "on" } else { "off" }.into());
            }
        }
        kv("layers", self.layers.len().to_string());
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layer{}.", i + 1);
            kv(&format!("{p}centers"), l.n_centers.to_string());
            kv(&format!("{p}radius"), format!("{:?}", l.radius));
            kv(&format!("{p}k"), l.k.to_string());
            kv(&format!("{p}mlp"), fmt_list(&l.mlp));
            match &l.csm {
                None => kv(&format!("{p}csm"), "off".into()),
                Some(c) => {
                    kv(&format!("{p}csm"), c.variant.to_string());
                    kv(&format!("{p}csm_k"), c.k.to_string());
                }
            }
            match &l.rum {
                None => kv(&format!("{p}rum"), "off".into()),
                Some(r) => {
                    kv(&format!("{p}rum"), r.kind.to_string());
                    kv(&format!("{p}rum_shells"), r.shells.to_string());
                    kv(&format!("{p}rum_cap"), r.neighbor_cap.to_string());
                    kv(
                        &format!("{p}rum_scale"),
                        if r.scale_by_radius { "on" } else { "off" }.into(),
                    );
                }
            }
        }
        kv("global.mlp", fmt_list(&self.global_mlp));
        kv("head.mlp", fmt_list(&self.head));
        if let Some(o) = &self.out {
            kv("out", o.display().to_string());
        }
        s
    }

    /// Applies `key=value` overrides on top of the canonical text form.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut text = self.to_text();
        let mut map: BTreeMap<String, String> = parse_entries(&text)?.into_iter().map(|(_, k, v)| (k, v)).collect();
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        text.clear();
        for (k, v) in map {
            let _ = writeln!(text, "{k} = {v}");
        }
        RunConfig::parse(&text)
    }
}
