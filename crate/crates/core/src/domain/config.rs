use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{key}: cannot parse `{value}`")]
    Parse { key: String, value: String },
    #[error("{key}: {reason}")]
    Range {
        key: &'static str,
        reason: &'static str,
    },
    #[error("K exceeds C (num_clusters = {k}, num_clients = {c})")]
    ClusterCount { k: u32, c: u32 },
    #[error(
        "selection_rate * num_clients / num_clusters < 1: no selectable participant per cluster"
    )]
    NoSelectableParticipant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// One hidden ReLU layer with a softmax head.
    Mlp,
    /// Softmax regression, convex in its parameters.
    Logistic,
}

impl FromStr for ModelKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "logistic" => Ok(ModelKind::Logistic),
            _ => Err(()),
        }
    }
}

impl ModelKind {
    fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Logistic => "logistic",
        }
    }
}

/// Every tunable of an experiment. Keys in the config file carry the
/// field names verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_clients: u32,
    pub num_clusters: u32,
    pub rounds: u32,
    pub local_epochs: u32,
    /// FixMatch confidence threshold.
    pub confidence: f64,
    /// Beta(mu, mu) parameter for the CutMix ratio.
    pub beta_param: f64,
    /// Weight of the FixMatch term in the semi-supervised loss.
    pub loss_weight: f64,
    /// Weight of gradient similarity in the joint clustering feature.
    pub cluster_weight: f64,
    /// Fraction of each cluster aggregated per round.
    pub selection_rate: f64,
    /// Max-abs update change above which 8-bit quantization is used.
    pub gradient_threshold: f64,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub momentum: f64,
    pub seed: u64,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    /// dBm/Hz
    pub noise_density: f64,
    /// J s^2 / cycle^3
    pub energy_coefficient: f64,
    pub recluster_interval: u32,

    pub num_planes: u32,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbw: f64,
    pub cpu_freq_hz: f64,
    /// Client CPU frequencies are drawn uniformly from `[f (1 - h), f (1 + h)]`.
    pub cpu_heterogeneity: f64,
    pub cycles_per_sample: f64,
    /// Intra-cluster aggregation delay charged per cluster per round.
    pub aggregation_delay_s: f64,
    pub gs_interval: u32,
    pub gs_lat_deg: f64,
    pub gs_lon_deg: f64,
    /// Rounds of completion times used for the adaptive deadline.
    pub history_window: u32,
    pub kmeans_max_iter: u32,
    pub normalize_weights: bool,
    pub compression: bool,
    /// Fraction of coordinates kept by the sparsifier.
    pub keep_ratio: f64,
    pub check_visibility: bool,

    pub model: ModelKind,
    pub hidden_width: u32,
    pub num_classes: u32,
    pub samples_per_class: u32,
    pub class_separation: f64,
    pub grid_height: u32,
    pub grid_width: u32,
    pub grid_channels: u32,
    pub labeled_fraction: f64,
    pub eval_fraction: f64,
    pub designated_fraction: f64,
    /// Gaussian noise of the strong augmentation, relative to feature std.
    pub strong_noise: f64,
    /// Area fraction zeroed by the strong augmentation's cutout.
    pub cutout_fraction: f64,
    /// Directory of pre-partitioned shard files; synthetic data when unset.
    pub data_dir: Option<String>,
    pub stop_at_accuracy: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_clients: 20,
            num_clusters: 4,
            rounds: 200,
            local_epochs: 1,
            confidence: 0.95,
            beta_param: 1.0,
            loss_weight: 0.5,
            cluster_weight: 0.4,
            selection_rate: 0.6,
            gradient_threshold: 0.01,
            learning_rate: 0.01,
            batch_size: 64,
            momentum: 0.9,
            seed: 1,
            altitude_km: 1300.0,
            inclination_deg: 53.0,
            noise_density: -174.0,
            energy_coefficient: 1e-28,
            recluster_interval: 50,

            num_planes: 4,
            carrier_hz: 27e9,
            bandwidth_hz: 2e7,
            tx_power_dbw: 30.0,
            cpu_freq_hz: 5e10,
            cpu_heterogeneity: 0.5,
            cycles_per_sample: 1e8,
            aggregation_delay_s: 0.0,
            gs_interval: 1,
            gs_lat_deg: 30.5,
            gs_lon_deg: 114.3,
            history_window: 5,
            kmeans_max_iter: 100,
            normalize_weights: false,
            compression: true,
            keep_ratio: 0.125,
            check_visibility: true,

            model: ModelKind::Mlp,
            hidden_width: 32,
            num_classes: 4,
            samples_per_class: 500,
            class_separation: 0.6,
            grid_height: 8,
            grid_width: 8,
            grid_channels: 1,
            labeled_fraction: 0.1,
            eval_fraction: 0.1,
            designated_fraction: 0.2,
            strong_noise: 0.1,
            cutout_fraction: 0.25,
            data_dir: None,
            stop_at_accuracy: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Parse {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn check(ok: bool, key: &'static str, reason: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range { key, reason })
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment. The result is not validated.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: n + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: n + 1 });
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "num_clients" => self.num_clients = parse_value(key, v)?,
            "num_clusters" => self.num_clusters = parse_value(key, v)?,
            "rounds" => self.rounds = parse_value(key, v)?,
            "local_epochs" => self.local_epochs = parse_value(key, v)?,
            "confidence" => self.confidence = parse_value(key, v)?,
            "beta_param" => self.beta_param = parse_value(key, v)?,
            "loss_weight" => self.loss_weight = parse_value(key, v)?,
            "cluster_weight" => self.cluster_weight = parse_value(key, v)?,
            "selection_rate" => self.selection_rate = parse_value(key, v)?,
            "gradient_threshold" => self.gradient_threshold = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "altitude_km" => self.altitude_km = parse_value(key, v)?,
            "inclination_deg" => self.inclination_deg = parse_value(key, v)?,
            "noise_density" => self.noise_density = parse_value(key, v)?,
            "energy_coefficient" => self.energy_coefficient = parse_value(key, v)?,
            "recluster_interval" => self.recluster_interval = parse_value(key, v)?,
            "num_planes" => self.num_planes = parse_value(key, v)?,
            "carrier_hz" => self.carrier_hz = parse_value(key, v)?,
            "bandwidth_hz" => self.bandwidth_hz = parse_value(key, v)?,
            "tx_power_dbw" => self.tx_power_dbw = parse_value(key, v)?,
            "cpu_freq_hz" => self.cpu_freq_hz = parse_value(key, v)?,
            "cpu_heterogeneity" => self.cpu_heterogeneity = parse_value(key, v)?,
            "cycles_per_sample" => self.cycles_per_sample = parse_value(key, v)?,
            "aggregation_delay_s" => self.aggregation_delay_s = parse_value(key, v)?,
            "gs_interval" => self.gs_interval = parse_value(key, v)?,
            "gs_lat_deg" => self.gs_lat_deg = parse_value(key, v)?,
            "gs_lon_deg" => self.gs_lon_deg = parse_value(key, v)?,
            "history_window" => self.history_window = parse_value(key, v)?,
            "kmeans_max_iter" => self.kmeans_max_iter = parse_value(key, v)?,
            "normalize_weights" => self.normalize_weights = parse_value(key, v)?,
            "compression" => self.compression = parse_value(key, v)?,
            "keep_ratio" => self.keep_ratio = parse_value(key, v)?,
            "check_visibility" => self.check_visibility = parse_value(key, v)?,
            "model" => self.model = parse_value(key, v)?,
            "hidden_width" => self.hidden_width = parse_value(key, v)?,
            "num_classes" => self.num_classes = parse_value(key, v)?,
            "samples_per_class" => self.samples_per_class = parse_value(key, v)?,
            "class_separation" => self.class_separation = parse_value(key, v)?,
            "grid_height" => self.grid_height = parse_value(key, v)?,
            "grid_width" => self.grid_width = parse_value(key, v)?,
            "grid_channels" => self.grid_channels = parse_value(key, v)?,
            "labeled_fraction" => self.labeled_fraction = parse_value(key, v)?,
            "eval_fraction" => self.eval_fraction = parse_value(key, v)?,
            "designated_fraction" => self.designated_fraction = parse_value(key, v)?,
            "strong_noise" => self.strong_noise = parse_value(key, v)?,
            "cutout_fraction" => self.cutout_fraction = parse_value(key, v)?,
            "data_dir" => self.data_dir = parse_optional(key, v)?,
            "stop_at_accuracy" => self.stop_at_accuracy = parse_optional(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |o: &Option<String>| o.clone().unwrap_or_else(|| "none".into());
        vec![
            ("num_clients", self.num_clients.to_string()),
            ("num_clusters", self.num_clusters.to_string()),
            ("rounds", self.rounds.to_string()),
            ("local_epochs", self.local_epochs.to_string()),
            ("confidence", self.confidence.to_string()),
            ("beta_param", self.beta_param.to_string()),
            ("loss_weight", self.loss_weight.to_string()),
            ("cluster_weight", self.cluster_weight.to_string()),
            ("selection_rate", self.selection_rate.to_string()),
            ("gradient_threshold", self.gradient_threshold.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("momentum", self.momentum.to_string()),
            ("seed", self.seed.to_string()),
            ("altitude_km", self.altitude_km.to_string()),
            ("inclination_deg", self.inclination_deg.to_string()),
            ("noise_density", self.noise_density.to_string()),
            ("energy_coefficient", self.energy_coefficient.to_string()),
            ("recluster_interval", self.recluster_interval.to_string()),
            ("num_planes", self.num_planes.to_string()),
            ("carrier_hz", self.carrier_hz.to_string()),
            ("bandwidth_hz", self.bandwidth_hz.to_string()),
            ("tx_power_dbw", self.tx_power_dbw.to_string()),
            ("cpu_freq_hz", self.cpu_freq_hz.to_string()),
            ("cpu_heterogeneity", self.cpu_heterogeneity.to_string()),
            ("cycles_per_sample", self.cycles_per_sample.to_string()),
            ("aggregation_delay_s", self.aggregation_delay_s.to_string()),
            ("gs_interval", self.gs_interval.to_string()),
            ("gs_lat_deg", self.gs_lat_deg.to_string()),
            ("gs_lon_deg", self.gs_lon_deg.to_string()),
            ("history_window", self.history_window.to_string()),
            ("kmeans_max_iter", self.kmeans_max_iter.to_string()),
            ("normalize_weights", self.normalize_weights.to_string()),
            ("compression", self.compression.to_string()),
            ("keep_ratio", self.keep_ratio.to_string()),
            ("check_visibility", self.check_visibility.to_string()),
            ("model", self.model.as_str().to_string()),
            ("hidden_width", self.hidden_width.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("samples_per_class", self.samples_per_class.to_string()),
            ("class_separation", self.class_separation.to_string()),
            ("grid_height", self.grid_height.to_string()),
            ("grid_width", self.grid_width.to_string()),
            ("grid_channels", self.grid_channels.to_string()),
            ("labeled_fraction", self.labeled_fraction.to_string()),
            ("eval_fraction", self.eval_fraction.to_string()),
            ("designated_fraction", self.designated_fraction.to_string()),
            ("strong_noise", self.strong_noise.to_string()),
            ("cutout_fraction", self.cutout_fraction.to_string()),
            ("data_dir", opt(&self.data_dir)),
            (
                "stop_at_accuracy",
                self.stop_at_accuracy
                    .map_or_else(|| "none".into(), |v| v.to_string()),
            ),
        ]
    }

    /// Renders every key, one per line, in a stable order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Checks every range constraint and returns the config unchanged.
    pub fn validate(self) -> Result<Self, ConfigError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        check(self.num_clients >= 1, "num_clients", "must be at least 1")?;
        check(self.num_clusters >= 1, "num_clusters", "must be at least 1")?;
        if self.num_clusters > self.num_clients {
            return Err(ConfigError::ClusterCount {
                k: self.num_clusters,
                c: self.num_clients,
            });
        }
        check(
            self.confidence > 0.0 && self.confidence <= 1.0,
            "confidence",
            "confidence threshold out of (0,1]",
        )?;
        check(
            self.beta_param > 0.0 && self.beta_param.is_finite(),
            "beta_param",
            "beta parameter must be positive",
        )?;
        check(
            unit(self.loss_weight),
            "loss_weight",
            "loss weight out of [0,1]",
        )?;
        check(
            unit(self.cluster_weight),
            "cluster_weight",
            "cluster weight out of [0,1]",
        )?;
        check(
            self.selection_rate > 0.0 && self.selection_rate <= 1.0,
            "selection_rate",
            "selection rate out of (0,1]",
        )?;
        if self.selection_rate * f64::from(self.num_clients) / f64::from(self.num_clusters) < 1.0 {
            return Err(ConfigError::NoSelectableParticipant);
        }
        check(
            self.gradient_threshold > 0.0 && self.gradient_threshold.is_finite(),
            "gradient_threshold",
            "gradient threshold must be positive",
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            "learning rate must be positive",
        )?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(
            unit(self.momentum) && self.momentum < 1.0,
            "momentum",
            "momentum out of [0,1)",
        )?;
        check(
            self.altitude_km > 0.0 && self.altitude_km.is_finite(),
            "altitude_km",
            "altitude must be positive",
        )?;
        check(
            (0.0..=180.0).contains(&self.inclination_deg),
            "inclination_deg",
            "inclination out of [0,180]",
        )?;
        check(
            self.noise_density.is_finite(),
            "noise_density",
            "must be finite",
        )?;
        check(
            self.energy_coefficient >= 0.0 && self.energy_coefficient.is_finite(),
            "energy_coefficient",
            "must be non-negative",
        )?;
        check(
            self.recluster_interval >= 1,
            "recluster_interval",
            "must be at least 1",
        )?;
        check(
            self.num_planes >= 1 && self.num_planes <= self.num_clients,
            "num_planes",
            "must lie in [1, num_clients]",
        )?;
        check(
            self.carrier_hz > 0.0,
            "carrier_hz",
            "carrier must be positive",
        )?;
        check(
            self.bandwidth_hz > 0.0,
            "bandwidth_hz",
            "bandwidth must be positive",
        )?;
        check(
            self.tx_power_dbw.is_finite(),
            "tx_power_dbw",
            "must be finite",
        )?;
        check(
            self.cpu_freq_hz > 0.0,
            "cpu_freq_hz",
            "cpu frequency must be positive",
        )?;
        check(
            (0.0..1.0).contains(&self.cpu_heterogeneity),
            "cpu_heterogeneity",
            "heterogeneity out of [0,1)",
        )?;
        check(
            self.cycles_per_sample >= 0.0 && self.cycles_per_sample.is_finite(),
            "cycles_per_sample",
            "must be non-negative",
        )?;
        check(
            self.aggregation_delay_s >= 0.0 && self.aggregation_delay_s.is_finite(),
            "aggregation_delay_s",
            "must be non-negative",
        )?;
        check(self.gs_interval >= 1, "gs_interval", "must be at least 1")?;
        check(
            self.history_window >= 1,
            "history_window",
            "must be at least 1",
        )?;
        check(
            self.kmeans_max_iter >= 1,
            "kmeans_max_iter",
            "must be at least 1",
        )?;
        check(
            self.keep_ratio > 0.0 && self.keep_ratio <= 1.0,
            "keep_ratio",
            "keep ratio out of (0,1]",
        )?;
        check(
            self.num_classes >= 2,
            "num_classes",
            "need at least two classes",
        )?;
        check(
            self.num_classes <= 255,
            "num_classes",
            "at most 255 classes",
        )?;
        check(
            self.model == ModelKind::Logistic || self.hidden_width >= 1,
            "hidden_width",
            "must be at least 1",
        )?;
        check(
            self.class_separation >= 0.0 && self.class_separation.is_finite(),
            "class_separation",
            "must be non-negative",
        )?;
        check(
            (1..=255).contains(&self.grid_height)
                && (1..=255).contains(&self.grid_width)
                && (1..=255).contains(&self.grid_channels),
            "grid_height",
            "grid dimensions must lie in [1,255]",
        )?;
        check(
            self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0,
            "labeled_fraction",
            "labeled fraction out of (0,1)",
        )?;
        check(
            (0.0..1.0).contains(&self.eval_fraction)
                && self.eval_fraction + self.labeled_fraction < 1.0,
            "eval_fraction",
            "eval plus labeled fraction must stay below 1",
        )?;
        check(
            unit(self.designated_fraction),
            "designated_fraction",
            "designated fraction out of [0,1]",
        )?;
        check(
            self.strong_noise >= 0.0 && self.strong_noise.is_finite(),
            "strong_noise",
            "must be non-negative",
        )?;
        check(
            (0.0..1.0).contains(&self.cutout_fraction),
            "cutout_fraction",
            "cutout fraction out of [0,1)",
        )?;
        if let Some(target) = self.stop_at_accuracy {
            check(
                unit(target),
                "stop_at_accuracy",
                "target accuracy out of [0,1]",
            )?;
        }
        Ok(self)
    }
}
