use std::collections::BTreeMap;

use cpcasr::checkpoint::{Checkpoint, ROUND_TRIP_TOLERANCE};
use cpcasr::corpus::{phone_symbol, render_corpus, SynthSpec};
use cpcasr::cpc::{pretrain, CpcConfig, CpcModel};
use cpcasr::features::MfccConfig;
use cpcasr::probe::{LabeledUtterance, train_probe, FeatureKind, Frontend, ProbeConfig, SymbolTable};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn trained_models_survive_save_and_load() {
    let spec = SynthSpec {
        n_utterances: 16,
        ..SynthSpec::default()
    };
    let utts = render_corpus(&spec).unwrap();
    let symbols = SymbolTable::from_inventory(&(0..3).map(phone_symbol).collect::<Vec<_>>());
    let data: Vec<LabeledUtterance> = utts
        .iter()
        .map(|u| LabeledUtterance {
            waveform: u.waveform.clone(),
            labels: symbols.encode(&u.transcript()).unwrap(),
        })
        .collect();
    let config = CpcConfig {
        enc_channels: vec![16; 4],
        enc_kernels: vec![10, 8, 4, 4],
        enc_strides: vec![5, 4, 2, 4],
        latent_dim: 16,
        context_dim: 16,
        k_steps: 3,
        epochs: 5,
        window_samples: 4000,
        ..CpcConfig::default()
    };
    let waves: Vec<_> = data.iter().map(|u| u.waveform.clone()).collect();
    let backbone = pretrain(CpcModel::new(&config).unwrap(), &waves, &config).unwrap().model;
    let probe_config = ProbeConfig {
        epochs: 5,
        lr: 1e-2,
        ..ProbeConfig::default()
    };
    let probe = train_probe(Some(&backbone), &symbols, &data, &probe_config).unwrap().probe;

    let meta = BTreeMap::new();
    let backbone2 = Checkpoint::from_bytes(&Checkpoint::from_cpc(&backbone, &meta, 0).to_bytes())
        .unwrap()
        .to_cpc()
        .unwrap();
    let (probe2, mfcc2) = Checkpoint::from_bytes(&Checkpoint::from_probe(&probe, &MfccConfig::default(), &meta, 0).to_bytes())
        .unwrap()
        .to_probe()
        .unwrap();
    assert_eq!(mfcc2, MfccConfig::default());

    let fe = Frontend::new(FeatureKind::CpcContext, Some(&backbone), &MfccConfig::default(), 16_000).unwrap();
    let fe2 = Frontend::new(FeatureKind::CpcContext, Some(&backbone2), &mfcc2, 16_000).unwrap();
    let mut worst = 0.0f64;
    for u in &data {
        let a = probe.log_probs(&fe.features(&u.waveform).unwrap()).unwrap();
        let b = probe2.log_probs(&fe2.features(&u.waveform).unwrap()).unwrap();
        worst = worst.max(max_abs_diff(a.data(), b.data()));
    }
    assert!(worst < ROUND_TRIP_TOLERANCE, "max log-prob drift {worst:e}");
}
