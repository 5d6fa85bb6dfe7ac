use proptest::prelude::*;
use stmlp::checkpoint::{Checkpoint, MAGIC};
use stmlp::config::Preprocess;
use stmlp_core::model::{LnAxis, SeApply, SeMode, Variant};
use stmlp_core::{ModelConfig, ModelParams};

fn tiny() -> ModelConfig {
    ModelConfig {
        layers: 2,
        joints: 2,
        hidden: 8,
        time_steps: 3,
        spatial_hidden: 4,
        temporal_hidden: 5,
        classes: 3,
        ..ModelConfig::tcg()
    }
}

fn with_bits(cfg: &ModelConfig, bits: &[u64]) -> ModelParams {
    let mut p = ModelParams::zeros(cfg);
    let mut i = 0;
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_bits(bits[i % bits.len()]);
            i += 1;
        }
    }
    p
}

fn bits(p: &ModelParams) -> Vec<u64> {
    p.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
}

#[test]
fn file_round_trip_is_bit_exact() {
    let cfg = tiny();
    let specials = [
        0.1f64.to_bits(),
        (-0.0f64).to_bits(),
        f64::MIN_POSITIVE.to_bits(),
        1u64, // subnormal
        f64::MAX.to_bits(),
        (-1.0f64 / 3.0).to_bits(),
    ];
    let mut ckpt = Checkpoint::new(cfg.clone(), with_bits(&cfg, &specials), 42).unwrap();
    ckpt.header.preprocess = Preprocess { affine: Some([[1.0, 0.0, 0.0, 0.25], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1e-17]]), root_joint: Some(1) };
    ckpt.header.metadata.insert("final_train_accuracy".into(), 0.1234567890123456789f64.into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.stmlp");
    ckpt.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(bits(&loaded.params), bits(&ckpt.params));
    assert_eq!(loaded.header, ckpt.header);
    let path2 = dir.path().join("again.stmlp");
    loaded.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path2).unwrap(), first);
    assert_eq!(&first[..8], MAGIC);
}

#[test]
fn layout_is_documented_header_then_values() {
    let cfg = tiny();
    let params = ModelParams::init(&cfg, 1).unwrap();
    let bytes = Checkpoint::new(cfg.clone(), params.clone(), 1).unwrap().to_bytes();
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    assert_eq!(header["format_version"], 1);
    assert_eq!(header["config"]["layers"], 2);
    let data = &bytes[16 + len..];
    assert_eq!(data.len(), 8 * cfg.param_count());
    let first = params.tensors()[0][0];
    assert_eq!(f64::from_le_bytes(data[..8].try_into().unwrap()), first);
}

#[test]
fn corrupt_files_are_rejected() {
    let cfg = tiny();
    let good = Checkpoint::new(cfg.clone(), ModelParams::init(&cfg, 0).unwrap(), 0).unwrap().to_bytes();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad_magic).unwrap_err().to_string().contains("magic"));
    assert!(Checkpoint::from_bytes(&good[..good.len() - 3]).is_err());
    let mut long = good.clone();
    long.extend_from_slice(&[0; 8]);
    assert!(Checkpoint::from_bytes(&long).is_err());
    let mut huge = good.clone();
    huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(Checkpoint::from_bytes(&huge).is_err());

    let len = u64::from_le_bytes(good[8..16].try_into().unwrap()) as usize;
    let text = String::from_utf8(good[16..16 + len].to_vec()).unwrap();
    let renamed = text.replacen("projection.weight", "projection.weights", 1);
    let mut swapped = good[..8].to_vec();
    swapped.extend_from_slice(&(renamed.len() as u64).to_le_bytes());
    swapped.extend_from_slice(renamed.as_bytes());
    swapped.extend_from_slice(&good[16 + len..]);
    let msg = Checkpoint::from_bytes(&swapped).unwrap_err().to_string();
    assert!(msg.contains("projection.weights"), "{msg}");
}

#[test]
fn mismatched_params_are_refused_at_creation() {
    let other = ModelConfig { hidden: 6, ..tiny() };
    assert!(Checkpoint::new(tiny(), ModelParams::zeros(&other), 0).is_err());
}

fn config_strategy() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..3,
        1usize..4,
        2usize..7,
        2usize..6,
        prop::sample::select(vec![Variant::Full, Variant::SpatialOnly, Variant::TemporalOnly, Variant::TwoStream]),
        prop::sample::select(vec![SeMode::Shared, SeMode::Separate, SeMode::Off]),
        prop::sample::select(vec![SeApply::ScaleRows, SeApply::ColumnSoftmax]),
        prop::sample::select(vec![LnAxis::Operand, LnAxis::Features, LnAxis::Time]),
    )
        .prop_map(|(layers, joints, hidden, time_steps, variant, se_mode, se_apply, ln_axis)| ModelConfig {
            layers,
            joints,
            hidden,
            time_steps,
            spatial_hidden: 3,
            temporal_hidden: 4,
            classes: 2,
            variant,
            se_mode,
            se_apply,
            ln_axis,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_config_round_trips(cfg in config_strategy(), seed in any::<u64>(), raw in prop::collection::vec(any::<u64>(), 1..16)) {
        let params = with_bits(&cfg, &raw);
        let ckpt = Checkpoint::new(cfg.clone(), params, seed).unwrap();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(bits(&back.params), bits(&ckpt.params));
        prop_assert_eq!(&back.header, &ckpt.header);
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.params.param_count(), cfg.param_count());
    }
}
