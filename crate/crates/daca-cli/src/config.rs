//! Translation between flat key-value files and the typed configs.

use daca_core::data::{GaussianComponent, SyntheticDomain};
use daca_core::tensor::Activation;
use daca_core::{Error, Result, SyntheticSpec, TrainConfig};

use crate::kv::KvFile;

const TRAIN_KEYS: &[&str] = &[
    "lr",
    "epochs",
    "warmup_epochs",
    "batch_size",
    "negatives_per_anchor",
    "temperature",
    "weight_domain",
    "weight_contrastive",
    "weight_concept",
    "weight_source_pairs",
    "disable_concept_module",
    "disable_contrastive_submodule",
    "seed",
    "transform_hidden",
    "transform_out",
    "head_hidden",
    "similarity_hidden",
    "similarity_out",
    "hidden_activation",
];

/// Builds a [`TrainConfig`] from a key-value file, starting from defaults.
pub fn train_config_from_kv(kv: &KvFile) -> Result<TrainConfig> {
    kv.check_known(TRAIN_KEYS, &[])?;
    let mut config = TrainConfig::default();
    if let Some(v) = kv.f64("lr")? {
        config.lr = v;
    }
    if let Some(v) = kv.usize("epochs")? {
        config.epochs = v;
    }
    if let Some(v) = kv.usize("warmup_epochs")? {
        config.warmup_epochs = v;
    }
    if let Some(v) = kv.usize("batch_size")? {
        config.batch_size = v;
    }
    if let Some(v) = kv.usize("negatives_per_anchor")? {
        config.negatives_per_anchor = v;
    }
    if let Some(v) = kv.f64("temperature")? {
        config.temperature = v;
    }
    if let Some(v) = kv.f64("weight_domain")? {
        config.weight_domain = v;
    }
    if let Some(v) = kv.f64("weight_contrastive")? {
        config.weight_contrastive = v;
    }
    if let Some(v) = kv.f64("weight_concept")? {
        config.weight_concept = v;
    }
    match kv.get("weight_source_pairs") {
        None | Some("auto") => {}
        Some(_) => config.weight_source_pairs = kv.f64("weight_source_pairs")?,
    }
    if let Some(v) = kv.bool("disable_concept_module")? {
        config.disable_concept_module = v;
    }
    if let Some(v) = kv.bool("disable_contrastive_submodule")? {
        config.disable_contrastive_submodule = v;
    }
    if let Some(v) = kv.u64("seed")? {
        config.seed = v;
    }
    if let Some(v) = kv.usize_list("transform_hidden")? {
        config.arch.transform_hidden = v;
    }
    if let Some(v) = kv.usize("transform_out")? {
        config.arch.transform_out = v;
    }
    if let Some(v) = kv.usize_list("head_hidden")? {
        config.arch.head_hidden = v;
    }
    if let Some(v) = kv.usize_list("similarity_hidden")? {
        config.arch.similarity_hidden = v;
    }
    if let Some(v) = kv.usize("similarity_out")? {
        config.arch.similarity_out = v;
    }
    if let Some(v) = kv.get("hidden_activation") {
        config.arch.hidden_activation = match v {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "hidden_activation must be relu or tanh, got {other:?}"
                )))
            }
        };
    }
    config.validate()?;
    Ok(config)
}

fn parse_domain(kv: &KvFile, prefix: &str, name: String) -> Result<SyntheticDomain> {
    let samples = kv
        .usize(&format!("{prefix}.samples"))?
        .ok_or_else(|| Error::InvalidConfig(format!("missing {prefix}.samples")))?;
    let weights = kv
        .f64_list(&format!("{prefix}.labeler.weights"))?
        .ok_or_else(|| Error::InvalidConfig(format!("missing {prefix}.labeler.weights")))?;
    let bias = kv.f64(&format!("{prefix}.labeler.bias"))?.unwrap_or(0.0);
    let labeler = daca_core::LabelingFunction::new(weights, bias, 0.0)?;
    let mut components = Vec::new();
    for c in 0.. {
        let mean_key = format!("{prefix}.component.{c}.mean");
        if !kv.contains(&mean_key) {
            break;
        }
        components.push(GaussianComponent {
            mean: kv.f64_list(&mean_key)?.unwrap(),
            scale: kv
                .f64(&format!("{prefix}.component.{c}.scale"))?
                .unwrap_or(1.0),
            weight: kv
                .f64(&format!("{prefix}.component.{c}.weight"))?
                .unwrap_or(1.0),
        });
    }
    if components.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{prefix} needs at least one component (missing {prefix}.component.0.mean)"
        )));
    }
    Ok(SyntheticDomain {
        name,
        samples,
        components,
        labeler,
    })
}

/// Builds a [`SyntheticSpec`] from a key-value file. Source domains are
/// indexed `source.0.*`, `source.1.*`, ...; the target is `target.*`.
pub fn synthetic_spec_from_kv(kv: &KvFile) -> Result<SyntheticSpec> {
    kv.check_known(&["feature_dim", "seed", "noise"], &["source.", "target."])?;
    let feature_dim = kv
        .usize("feature_dim")?
        .ok_or_else(|| Error::InvalidConfig("missing feature_dim".into()))?;
    let seed = kv.u64("seed")?.unwrap_or(0);
    let noise = kv.f64("noise")?.unwrap_or(0.0);
    let mut sources = Vec::new();
    for j in 0.. {
        let prefix = format!("source.{j}");
        if !kv.contains(&format!("{prefix}.samples")) {
            break;
        }
        let name = kv
            .get(&format!("{prefix}.name"))
            .map(str::to_string)
            .unwrap_or_else(|| format!("s{j}"));
        sources.push(parse_domain(kv, &prefix, name)?);
    }
    if sources.is_empty() {
        return Err(Error::InvalidConfig(
            "spec defines no source domains (missing source.0.samples)".into(),
        ));
    }
    let target = parse_domain(kv, "target", "target".into())?;
    let spec = SyntheticSpec {
        feature_dim,
        sources,
        target,
        noise,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_config_parses_and_overrides_defaults() {
        let kv = KvFile::parse(
            "lr = 0.001\nepochs = 12\nwarmup_epochs = 4\ntransform_hidden = 8, 8\nhidden_activation = tanh\nweight_source_pairs = auto\n",
        )
        .unwrap();
        let config = train_config_from_kv(&kv).unwrap();
        assert_eq!(config.lr, 0.001);
        assert_eq!(config.epochs, 12);
        assert_eq!(config.arch.transform_hidden, vec![8, 8]);
        assert_eq!(config.arch.hidden_activation, Activation::Tanh);
        assert_eq!(config.weight_source_pairs, None);
        assert_eq!(config.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn train_config_rejects_unknown_keys_and_bad_values() {
        let kv = KvFile::parse("leraning_rate = 0.1\n").unwrap();
        assert!(train_config_from_kv(&kv).is_err());
        let kv = KvFile::parse("temperature = 2.0\n").unwrap();
        assert!(train_config_from_kv(&kv).is_err());
    }

    #[test]
    fn synthetic_spec_parses_domains() {
        let text = "\
feature_dim = 2
seed = 9
source.0.name = politics
source.0.samples = 50
source.0.labeler.weights = 2.0, -1.0
source.0.component.0.mean = 0.0, 0.0
source.1.samples = 30
source.1.labeler.weights = 1.0, 1.0
source.1.labeler.bias = 0.5
source.1.component.0.mean = 1.0, 1.0
source.1.component.0.scale = 0.5
target.samples = 40
target.labeler.weights = 2.0, -1.0
target.component.0.mean = 0.5, 0.5
";
        let spec = synthetic_spec_from_kv(&KvFile::parse(text).unwrap()).unwrap();
        assert_eq!(spec.sources.len(), 2);
        assert_eq!(spec.sources[0].name, "politics");
        assert_eq!(spec.sources[1].name, "s1");
        assert_eq!(spec.sources[1].labeler.bias, 0.5);
        assert_eq!(spec.target.samples, 40);
    }

    #[test]
    fn synthetic_spec_requires_core_fields() {
        assert!(synthetic_spec_from_kv(&KvFile::parse("feature_dim = 2\n").unwrap()).is_err());
        let incomplete = "feature_dim = 2\nsource.0.samples = 5\n";
        assert!(synthetic_spec_from_kv(&KvFile::parse(incomplete).unwrap()).is_err());
    }
}
