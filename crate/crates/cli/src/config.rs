//! Experiment manifests: a flat TOML key set layered over a preset.

use std::fs;
use std::path::{Path, PathBuf};

use abht_core::data::DEFAULT_NOISE_SD;
use abht_core::eval::{DataSource, SyntheticCase};
use abht_core::learners::SplitRule;
use abht_core::{BaseSpec, ExperimentConfig, Method, RegionSpec};
use serde::Deserialize;

use crate::CliError;

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// "a", "b" or "tabular"; picks the preset the other keys override.
    pub case: Option<String>,
    /// CSV file to use instead of synthetic draws.
    pub data_path: Option<PathBuf>,
    pub target: Option<String>,
    /// Train, validation and test fractions for `data_path`.
    pub fractions: Option<[f64; 3]>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub n_test: Option<usize>,
    pub noise_sd: Option<f64>,
    pub repetitions: Option<usize>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<String>>,
    pub bin_widths: Option<Vec<f64>>,
    pub depths: Option<Vec<u32>>,
    /// "uniform" or "midpoint".
    pub split_rule: Option<String>,
    pub learning_rates: Option<Vec<f64>>,
    pub iterations: Option<Vec<usize>>,
    pub ensemble_sizes: Option<Vec<usize>>,
    pub initial_width: Option<f64>,
    pub initial_depth: Option<u32>,
    pub max_stages: Option<usize>,
    pub min_val_points: Option<usize>,
    pub stage_shrinkage: Option<f64>,
    pub width_tolerance: Option<f64>,
    pub clip_bound: Option<f64>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The preset for `case` with every given key applied.
    pub fn build(&self) -> Result<ExperimentConfig, CliError> {
        let bad = |m: String| CliError::Config(m);
        let case = match (self.case.as_deref(), &self.data_path) {
            (Some(c), _) => c.to_ascii_lowercase(),
            (None, Some(_)) => "tabular".into(),
            (None, None) => "a".into(),
        };
        let mut c = match case.as_str() {
            "a" => ExperimentConfig::case_a(1000, 1000, 10000, 30, 0),
            "b" => ExperimentConfig::case_b(5000, 5000, 20000, 10, 0),
            "tabular" => {
                let mut c = ExperimentConfig::tabular(PathBuf::new(), "y", 3, 0);
                c.data = DataSource::Synthetic {
                    case: SyntheticCase::Tabular,
                    n_train: 800,
                    n_val: 800,
                    n_test: 400,
                    noise_sd: 1.0,
                };
                c
            }
            other => return Err(bad(format!("unknown case {other:?}; expected a, b or tabular"))),
        };

        if let Some(path) = &self.data_path {
            let f = self.fractions.unwrap_or([0.4, 0.4, 0.2]);
            if self.n_train.is_some() || self.n_val.is_some() || self.n_test.is_some() {
                return Err(bad("n_train, n_val and n_test do not apply to data_path".into()));
            }
            c.data = DataSource::Csv {
                path: path.clone(),
                target: self.target.clone().unwrap_or_else(|| "y".into()),
                fractions: (f[0], f[1], f[2]),
            };
        } else {
            if self.fractions.is_some() || self.target.is_some() {
                return Err(bad("fractions and target need data_path".into()));
            }
            if let DataSource::Synthetic {
                n_train,
                n_val,
                n_test,
                noise_sd,
                ..
            } = &mut c.data
            {
                set(n_train, self.n_train);
                set(n_val, self.n_val);
                set(n_test, self.n_test);
                set(noise_sd, self.noise_sd);
            }
        }

        set(&mut c.repetitions, self.repetitions);
        set(&mut c.seed, self.seed);
        if let Some(ms) = &self.methods {
            c.methods = ms
                .iter()
                .map(|m| Method::parse(m).ok_or_else(|| bad(format!("unknown method {m:?}"))))
                .collect::<Result<_, _>>()?;
        }

        let split_rule = match self.split_rule.as_deref() {
            None | Some("uniform") => SplitRule::Uniform,
            Some("midpoint") => SplitRule::Midpoint,
            Some(other) => return Err(bad(format!("unknown split_rule {other:?}"))),
        };
        match (&self.bin_widths, &self.depths) {
            (Some(_), Some(_)) => return Err(bad("set bin_widths or depths, not both".into())),
            (Some(ws), None) => {
                c.grids.bases = ws.iter().map(|&h| BaseSpec::histogram(h)).collect();
                if !matches!(c.abht.region, RegionSpec::Grid { .. }) {
                    c.abht.region = RegionSpec::Grid { initial_width: 0.2 };
                }
            }
            (None, Some(ds)) => {
                c.grids.bases = ds.iter().map(|&depth| BaseSpec::Binary { depth, split_rule }).collect();
                if !matches!(c.abht.region, RegionSpec::Tree { .. }) {
                    c.abht.region = RegionSpec::Tree {
                        initial_depth: 2,
                        split_rule,
                    };
                }
            }
            (None, None) => {}
        }
        if let RegionSpec::Tree { split_rule: r, .. } = &mut c.abht.region {
            *r = split_rule;
            for b in &mut c.grids.bases {
                if let BaseSpec::Binary { split_rule: s, .. } = b {
                    *s = split_rule;
                }
            }
        }
        match &mut c.abht.region {
            RegionSpec::Grid { initial_width } => {
                set(initial_width, self.initial_width);
                if self.initial_depth.is_some() {
                    return Err(bad("initial_depth applies to binary partitions only".into()));
                }
            }
            RegionSpec::Tree { initial_depth, .. } => {
                set(initial_depth, self.initial_depth);
                if self.initial_width.is_some() {
                    return Err(bad("initial_width applies to histogram partitions only".into()));
                }
            }
        }

        set(&mut c.grids.learning_rates, self.learning_rates.clone());
        set(&mut c.grids.iterations, self.iterations.clone());
        set(&mut c.grids.ensemble_sizes, self.ensemble_sizes.clone());
        set(&mut c.abht.max_stages, self.max_stages);
        set(&mut c.abht.min_val_points, self.min_val_points);
        if self.stage_shrinkage.is_some() {
            c.abht.stage_shrinkage = self.stage_shrinkage;
        }
        set(&mut c.abht.width_tolerance, self.width_tolerance);
        if self.clip_bound.is_some() {
            c.clip_bound = self.clip_bound;
        }
        c.validate().map_err(|e| bad(e.to_string()))?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Default noise level of the synthetic generators.
pub fn default_noise(case: SyntheticCase) -> f64 {
    match case {
        SyntheticCase::Tabular => 1.0,
        _ => DEFAULT_NOISE_SD,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_case_a() {
        let c = ConfigFile::parse("").unwrap().build().unwrap();
        assert_eq!(c, ExperimentConfig::case_a(1000, 1000, 10000, 30, 0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ConfigFile::parse("repetitons = 3\n").unwrap_err();
        assert!(matches!(e, CliError::Config(m) if m.contains("repetitons")));
    }

    #[test]
    fn overrides_apply() {
        let c = ConfigFile::parse(
            "case = \"b\"\nn_train = 50\nrepetitions = 2\nmethods = [\"abht\"]\nbin_widths = [0.1, 0.2]\nwidth_tolerance = 0.0\n",
        )
        .unwrap()
        .build()
        .unwrap();
        assert_eq!(c.repetitions, 2);
        assert_eq!(c.methods, vec![Method::Abht]);
        assert_eq!(c.grids.bases.len(), 2);
        assert_eq!(c.abht.width_tolerance, 0.0);
        assert!(matches!(c.data, DataSource::Synthetic { case: SyntheticCase::B, n_train: 50, .. }));
    }

    #[test]
    fn binary_grid_switches_region_family() {
        let c = ConfigFile::parse("depths = [3, 5]\nsplit_rule = \"midpoint\"\n")
            .unwrap()
            .build()
            .unwrap();
        assert!(matches!(
            c.abht.region,
            RegionSpec::Tree {
                split_rule: SplitRule::Midpoint,
                ..
            }
        ));
        assert!(ConfigFile::parse("depths = [3]\ninitial_width = 0.2\n").unwrap().build().is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "case = \"c\"",
            "methods = [\"forest\"]",
            "learning_rates = [2.0]",
            "bin_widths = [0.1]\ndepths = [3]",
            "target = \"y\"",
        ] {
            let r = ConfigFile::parse(text).and_then(|f| f.build());
            assert!(matches!(r, Err(CliError::Config(_))), "{text}");
        }
    }
}
