//! Flat TOML experiment files. Every key is optional and falls back to the
//! built-in default; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::Arrival;
use crate::gathering::GeoPoint;
use crate::selection::{RegistrationWindow, WindowState};
use crate::sim::{InitialReputation, RegistrationMode, SimConfig, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn value_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    // experiment
    pub variant: Option<String>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,

    // adversary
    pub ground_truth: Option<f64>,
    pub false_truth: Option<f64>,
    pub rmi: Option<f64>,
    pub rmo: Option<f64>,
    pub arrival: Option<String>,
    pub epochs_total: Option<u64>,
    pub warmup_epochs: Option<u64>,
    pub spawn_epochs: Option<u64>,
    pub initial_honest_producers: Option<usize>,
    pub spawned_producers: Option<usize>,
    pub pareto_shape: Option<f64>,
    pub n_indexers: Option<usize>,
    pub n_oracles: Option<usize>,
    pub max_producer_std: Option<f64>,
    pub tamper_jitter: Option<f64>,
    pub region_lat: Option<f64>,
    pub region_lon: Option<f64>,
    pub region_radius_km: Option<f64>,

    // ratings
    pub tau_s: Option<f64>,
    pub tau_v: Option<f64>,
    pub tau_t: Option<f64>,
    pub beta_rho: Option<f64>,
    pub beta_theta: Option<f64>,
    pub delta_rho: Option<f64>,
    pub delta_theta: Option<f64>,
    pub omega: Option<f64>,

    // chain
    pub block_interval_ms: Option<u64>,
    pub confirmation_depth: Option<u64>,
    pub hash_window_ms: Option<u64>,

    // protocol
    pub k_oracles: Option<usize>,
    pub k_indexers: Option<usize>,
    pub producers_per_indexer: Option<usize>,
    pub request_radius_km: Option<f64>,
    /// `producer-match` or `bernoulli`.
    pub registration: Option<String>,
    /// Bernoulli mode registers when a uniform draw exceeds this value.
    pub availability_threshold: Option<f64>,
    /// `neutral` or `gaussian`.
    pub initial_reputation: Option<String>,
    pub initial_reputation_mean: Option<f64>,
    pub initial_reputation_sd: Option<f64>,
    /// `fixed` or `adaptive`.
    pub window: Option<String>,
    pub window_ms: Option<u64>,
    pub window_min_ms: Option<f64>,
    pub window_max_ms: Option<f64>,
    pub window_alpha: Option<f64>,
    pub window_phi: Option<f64>,
    pub window_target_ms: Option<f64>,
    pub query_latency_median_ms: Option<f64>,
    pub query_latency_sigma: Option<f64>,
    pub submit_latency_median_ms: Option<f64>,
    pub submit_latency_sigma: Option<f64>,
    pub query_timeout_ms: Option<u64>,
    pub accuracy_last: Option<u64>,
    pub seed_proofs: Option<bool>,

    // sweep grids
    pub grid_rmi: Option<Vec<f64>>,
    pub grid_rmo: Option<Vec<f64>>,
    pub grid_omega: Option<Vec<f64>>,
    pub grid_arrival: Option<Vec<String>>,
    pub grid_variant: Option<Vec<String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Defaults overlaid with every key present in the file, validated.
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let mut c = SimConfig::default();
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            ground_truth => c.attack.ground_truth,
            false_truth => c.attack.false_truth,
            rmi => c.attack.rmi,
            rmo => c.attack.rmo,
            epochs_total => c.attack.epochs_total,
            warmup_epochs => c.attack.warmup_epochs,
            spawn_epochs => c.attack.spawn_epochs,
            initial_honest_producers => c.attack.initial_honest_producers,
            spawned_producers => c.attack.spawned_producers,
            pareto_shape => c.attack.pareto_shape,
            n_indexers => c.attack.n_indexers,
            n_oracles => c.attack.n_oracles,
            max_producer_std => c.attack.max_std,
            tamper_jitter => c.attack.tamper_jitter,
            region_radius_km => c.attack.region.radius_km,
            tau_s => c.rating.tau_s,
            tau_v => c.rating.tau_v,
            tau_t => c.rating.tau_t,
            beta_rho => c.rating.beta_rho,
            beta_theta => c.rating.beta_theta,
            delta_rho => c.rating.delta_rho,
            delta_theta => c.rating.delta_theta,
            omega => c.rating.omega,
            block_interval_ms => c.chain.block_interval_ms,
            confirmation_depth => c.chain.confirmation_depth,
            hash_window_ms => c.chain.hash_window_ms,
            k_oracles => c.k_oracles,
            k_indexers => c.k_indexers,
            producers_per_indexer => c.producers_per_indexer,
            request_radius_km => c.request_radius_km,
            query_latency_median_ms => c.query_latency.median_ms,
            query_latency_sigma => c.query_latency.sigma,
            submit_latency_median_ms => c.submit_latency.median_ms,
            submit_latency_sigma => c.submit_latency.sigma,
            query_timeout_ms => c.query_timeout_ms,
            accuracy_last => c.accuracy_last,
            seed_proofs => c.seed_proofs,
        }
        if self.region_lat.is_some() || self.region_lon.is_some() {
            let center = c.attack.region.center;
            c.attack.region.center =
                GeoPoint { lat: self.region_lat.unwrap_or(center.lat), lon: self.region_lon.unwrap_or(center.lon) };
        }
        if let Some(a) = &self.arrival {
            c.attack.arrival = a.parse().map_err(|e: String| value_err("arrival", e))?;
        }
        c.registration = match self.registration.as_deref() {
            None | Some("producer-match") => {
                if self.availability_threshold.is_some() {
                    return Err(value_err("availability_threshold", "only valid with registration = \"bernoulli\""));
                }
                RegistrationMode::ProducerMatch
            }
            Some("bernoulli") => {
                let t = self.availability_threshold.unwrap_or(0.5);
                if !(0.0..=1.0).contains(&t) {
                    return Err(value_err("availability_threshold", "must lie in [0, 1]"));
                }
                RegistrationMode::Bernoulli { p: 1.0 - t }
            }
            Some(other) => return Err(value_err("registration", format!("unknown mode `{other}`"))),
        };
        c.initial_reputation = match self.initial_reputation.as_deref() {
            None | Some("neutral") => InitialReputation::Neutral,
            Some("gaussian") => InitialReputation::Gaussian {
                mean: self.initial_reputation_mean.unwrap_or(0.7),
                sd: self.initial_reputation_sd.unwrap_or(0.1),
            },
            Some(other) => return Err(value_err("initial_reputation", format!("unknown law `{other}`"))),
        };
        c.window = match self.window.as_deref() {
            None | Some("fixed") => RegistrationWindow::Fixed(self.window_ms.unwrap_or(8000)),
            Some("adaptive") => {
                let mut w = WindowState::default();
                if let Some(ms) = self.window_ms {
                    w.w_base = ms as f64;
                    w.ema = ms as f64;
                    w.ema_target = ms as f64;
                }
                if let Some(v) = self.window_min_ms {
                    w.w_min = v;
                }
                if let Some(v) = self.window_max_ms {
                    w.w_max = v;
                }
                if let Some(v) = self.window_alpha {
                    w.alpha = v;
                }
                if let Some(v) = self.window_phi {
                    w.phi = v;
                }
                if let Some(v) = self.window_target_ms {
                    w.ema_target = v;
                }
                RegistrationWindow::Adaptive(w)
            }
            Some(other) => return Err(value_err("window", format!("unknown window `{other}`"))),
        };
        c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(c)
    }

    /// Variant named in the file, `medrb` with the configured omega if absent.
    pub fn variant(&self) -> Result<Variant, ConfigError> {
        let omega = self.omega.unwrap_or(crate::rating::RatingParams::default().omega);
        Variant::parse(self.variant.as_deref().unwrap_or("medrb"), omega).map_err(|e| value_err("variant", e))
    }
}

/// One dimension of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridAxis {
    Rmi(Vec<f64>),
    Rmo(Vec<f64>),
    Omega(Vec<f64>),
    Arrival(Vec<Arrival>),
    Variant(Vec<String>),
}

impl GridAxis {
    pub fn key(&self) -> &'static str {
        match self {
            GridAxis::Rmi(_) => "rmi",
            GridAxis::Rmo(_) => "rmo",
            GridAxis::Omega(_) => "omega",
            GridAxis::Arrival(_) => "arrival",
            GridAxis::Variant(_) => "variant",
        }
    }

    fn len(&self) -> usize {
        match self {
            GridAxis::Rmi(v) | GridAxis::Rmo(v) | GridAxis::Omega(v) => v.len(),
            GridAxis::Arrival(v) => v.len(),
            GridAxis::Variant(v) => v.len(),
        }
    }

    /// Parses `key=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self, ConfigError> {
        let (key, values) = spec.split_once('=').ok_or_else(|| value_err(spec, "expected key=v1,v2,..."))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(value_err(key, "grid has no values"));
        }
        let nums = || {
            items
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| value_err(key, format!("`{s}` is not a number"))))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(match key.trim() {
            "rmi" => GridAxis::Rmi(nums()?),
            "rmo" => GridAxis::Rmo(nums()?),
            "omega" => GridAxis::Omega(nums()?),
            "arrival" => GridAxis::Arrival(
                items
                    .iter()
                    .map(|s| s.parse::<Arrival>().map_err(|e| value_err(key, e)))
                    .collect::<Result<_, _>>()?,
            ),
            "variant" => {
                for v in &items {
                    Variant::parse(v, 0.0).map_err(|e| value_err(key, e))?;
                }
                GridAxis::Variant(items.iter().map(|s| s.to_string()).collect())
            }
            other => return Err(value_err(other, "not a sweepable key (rmi, rmo, omega, arrival, variant)")),
        })
    }
}

/// One point of the Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: SimConfig,
    pub variant: Variant,
}

/// Axes declared in the file followed by command-line axes; a later axis
/// with the same key replaces an earlier one.
pub fn collect_axes(file: &ConfigFile, extra: &[GridAxis]) -> Result<Vec<GridAxis>, ConfigError> {
    let mut axes: Vec<GridAxis> = Vec::new();
    let mut push = |a: GridAxis| {
        axes.retain(|b| b.key() != a.key());
        axes.push(a);
    };
    if let Some(v) = &file.grid_rmi {
        push(GridAxis::Rmi(v.clone()));
    }
    if let Some(v) = &file.grid_rmo {
        push(GridAxis::Rmo(v.clone()));
    }
    if let Some(v) = &file.grid_omega {
        push(GridAxis::Omega(v.clone()));
    }
    if let Some(v) = &file.grid_arrival {
        let parsed = v.iter().map(|s| s.parse::<Arrival>()).collect::<Result<Vec<_>, _>>();
        push(GridAxis::Arrival(parsed.map_err(|e| value_err("grid_arrival", e))?));
    }
    if let Some(v) = &file.grid_variant {
        push(GridAxis::Variant(v.clone()));
    }
    for a in extra {
        push(a.clone());
    }
    for a in &axes {
        if a.len() == 0 {
            return Err(value_err(a.key(), "grid has no values"));
        }
    }
    Ok(axes)
}

/// Expands the grid in row-major order (last axis varies fastest).
/// Variants without a ban threshold collapse the omega axis to one cell.
pub fn expand_grid(base: &SimConfig, variant: Variant, axes: &[GridAxis]) -> Result<Vec<GridCell>, ConfigError> {
    let mut cells = vec![(base.clone(), variant.label().to_string(), variant.omega().unwrap_or(base.rating.omega))];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.len());
        for (cfg, name, omega) in &cells {
            for i in 0..axis.len() {
                let (mut cfg, mut name, mut omega) = (cfg.clone(), name.clone(), *omega);
                match axis {
                    GridAxis::Rmi(v) => cfg.attack.rmi = v[i],
                    GridAxis::Rmo(v) => cfg.attack.rmo = v[i],
                    GridAxis::Omega(v) => omega = v[i],
                    GridAxis::Arrival(v) => cfg.attack.arrival = v[i],
                    GridAxis::Variant(v) => name = v[i].clone(),
                }
                next.push((cfg, name, omega));
            }
        }
        cells = next;
    }
    let mut out: Vec<GridCell> = Vec::with_capacity(cells.len());
    for (mut config, name, omega) in cells {
        let variant = Variant::parse(&name, omega).map_err(|e| value_err("variant", e))?;
        if let Some(w) = variant.omega() {
            config.rating.omega = w;
        }
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cell = GridCell { config, variant };
        if !out.contains(&cell) {
            out.push(cell);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let f = ConfigFile::parse("").unwrap();
        assert_eq!(f.sim_config().unwrap(), SimConfig::default());
        assert_eq!(f.variant().unwrap(), Variant::MedRB { omega: -0.6 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ConfigFile::parse("rmi = 0.1\nrmii = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("rmii"), "{err}");
    }

    #[test]
    fn wrong_types_are_rejected() {
        assert!(ConfigFile::parse("rmi = \"lots\"").is_err());
        assert!(ConfigFile::parse("k_oracles = -1").is_err());
    }

    #[test]
    fn keys_reach_their_fields() {
        let f = ConfigFile::parse(
            r#"
            rmi = 0.3
            rmo = 0.1
            arrival = "bursty"
            tau_s = 2.5
            k_indexers = 7
            registration = "bernoulli"
            availability_threshold = 0.5
            window = "adaptive"
            window_ms = 6000
            block_interval_ms = 500
            region_lat = 10.0
            "#,
        )
        .unwrap();
        let c = f.sim_config().unwrap();
        assert_eq!(c.attack.rmi, 0.3);
        assert_eq!(c.attack.rmo, 0.1);
        assert_eq!(c.attack.arrival, Arrival::Bursty);
        assert_eq!(c.rating.tau_s, 2.5);
        assert_eq!(c.k_indexers, 7);
        assert_eq!(c.registration, RegistrationMode::Bernoulli { p: 0.5 });
        assert!(matches!(c.window, RegistrationWindow::Adaptive(w) if w.w_base == 6000.0));
        assert_eq!(c.chain.block_interval_ms, 500);
        assert_eq!(c.attack.region.center.lat, 10.0);
        assert_eq!(c.attack.region.center.lon, 11.3);
    }

    #[test]
    fn semantic_errors_surface() {
        assert!(ConfigFile::parse("rmi = 1.5").unwrap().sim_config().is_err());
        assert!(ConfigFile::parse("registration = \"sometimes\"").unwrap().sim_config().is_err());
        assert!(ConfigFile::parse("availability_threshold = 0.3").unwrap().sim_config().is_err());
        assert!(ConfigFile::parse("variant = \"mean\"").unwrap().variant().is_err());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(GridAxis::parse("rmi=0.1,0.2").unwrap(), GridAxis::Rmi(vec![0.1, 0.2]));
        assert_eq!(
            GridAxis::parse("arrival=uniform,bursty").unwrap(),
            GridAxis::Arrival(vec![Arrival::Uniform, Arrival::Bursty])
        );
        assert!(GridAxis::parse("tau_s=1,2").is_err());
        assert!(GridAxis::parse("rmi=").is_err());
        assert!(GridAxis::parse("rmi").is_err());
        assert!(GridAxis::parse("variant=med,foo").is_err());
    }

    #[test]
    fn grid_expansion_is_cartesian() {
        let axes = vec![GridAxis::parse("rmi=0.1,0.2,0.3").unwrap(), GridAxis::parse("omega=-0.4,-0.6").unwrap()];
        let cells = expand_grid(&SimConfig::default(), Variant::MedRB { omega: -0.6 }, &axes).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].config.attack.rmi, 0.1);
        assert_eq!(cells[1].variant, Variant::MedRB { omega: -0.6 });
        assert_eq!(cells[5].config.attack.rmi, 0.3);
    }

    #[test]
    fn omega_collapses_for_variants_without_bans() {
        let axes = vec![GridAxis::parse("variant=med,medrb").unwrap(), GridAxis::parse("omega=-0.4,-0.8").unwrap()];
        let cells = expand_grid(&SimConfig::default(), Variant::Med, &axes).unwrap();
        let labels: Vec<String> = cells.iter().map(|c| format!("{}{:?}", c.variant, c.variant.omega())).collect();
        assert_eq!(labels, ["med None", "medrbSome(-0.4)", "medrbSome(-0.8)"].map(|s| s.replace(' ', "")));
    }

    #[test]
    fn cli_axes_replace_file_axes() {
        let f = ConfigFile::parse("grid_rmi = [0.1, 0.2]\ngrid_rmo = [0.0]").unwrap();
        let axes = collect_axes(&f, &[GridAxis::parse("rmi=0.5").unwrap()]).unwrap();
        assert_eq!(axes, vec![GridAxis::Rmo(vec![0.0]), GridAxis::Rmi(vec![0.5])]);
    }
}
