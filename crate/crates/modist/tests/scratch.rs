//! Temporary diagnostics; removed before release.

use modist::config::{TrainConfig, TrainMode};
use modist::encoders::EncoderParams;
use modist::nn::{softmax_cross_entropy, argmax};
use modist::trainer::*;
use std::path::PathBuf;

#[test]
#[ignore]
fn diagnose_supervised_learning() {
    let root = PathBuf::from("/tmp/modist-timing/runs");
    let mut cfg = TrainConfig::default();
    cfg.mode = TrainMode::Supervised;
    cfg.data_dir = root.join("data");
    cfg.aug.enabled = false;
    let corpus = load_corpus(&cfg.data_dir.join("pretrain"), None).unwrap();
    let nets = Networks::new(&cfg).unwrap();
    let state = init_state(&cfg, &nets, 8);

    // feature variability at init over 32 center-ish clips
    let sampler = cfg.sampler.clone();
    let feats: Vec<Vec<f64>> = corpus.items[..32]
        .iter()
        .map(|it| {
            let clip = modist::datapipe::gather_visual_clip(&it.video, 5, &sampler);
            nets.visual.forward(&clip.vol, &state.visual.online).unwrap()
        })
        .collect();
    let dim = feats[0].len();
    let mut mean = vec![0.0; dim];
    for f in &feats {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / 32.0;
        }
    }
    let mut var = 0.0;
    let mut scale = 0.0;
    for f in &feats {
        for (m, v) in mean.iter().zip(f) {
            var += (v - m) * (v - m);
            scale += v * v;
        }
    }
    println!("feature rel variance at init: {:.6}", var / scale.max(1e-12));

    // gradient norms at init for one batch
    let classifier = classifier_layer(128, 8);
    let cls = state.classifier.as_ref().unwrap();
    let mut g_vis = vec![0.0; nets.visual.param_count()];
    let mut g_cls = vec![0.0; cls.values.len()];
    let mut ce0 = 0.0;
    for it in &corpus.items[..32] {
        let clip = modist::datapipe::gather_visual_clip(&it.video, 5, &sampler);
        let (feat, cache) = nets.visual.forward_cached(&clip.vol, &state.visual.online).unwrap();
        let logits = classifier.forward(&feat, &cls.values);
        let (loss, dl) = softmax_cross_entropy(&logits, it.video.label);
        ce0 += loss / 32.0;
        let dfeat = classifier.backward(&feat, &cls.values, &dl, &mut g_cls);
        nets.visual.backward(&dfeat, &cache, &state.visual.online, &mut g_vis);
    }
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    println!(
        "init ce {:.4}; grad norms: visual {:.6e} cls {:.6e}; param norm visual {:.4}",
        ce0,
        norm(&g_vis) / 32.0,
        norm(&g_cls) / 32.0,
        norm(&state.visual.online.values)
    );

    // overfit 32 fixed clips with various lrs
    for lr in [0.003, 0.01, 0.03, 0.1, 0.3] {
        let nets = Networks::new(&cfg).unwrap();
        let mut state = init_state(&cfg, &nets, 8);
        let clips: Vec<(modist::tensor::Vol, usize)> = corpus.items[..32]
            .iter()
            .map(|it| {
                (
                    modist::datapipe::gather_visual_clip(&it.video, 5, &sampler).vol,
                    it.video.label,
                )
            })
            .collect();
        let mut vel_v = vec![0.0; nets.visual.param_count()];
        let mut vel_c = vec![0.0; state.classifier.as_ref().unwrap().values.len()];
        let mut last_acc = 0.0;
        let mut last_ce = 0.0;
        for _step in 0..200 {
            let mut g_vis = vec![0.0; nets.visual.param_count()];
            let cls_len = state.classifier.as_ref().unwrap().values.len();
            let mut g_cls = vec![0.0; cls_len];
            let mut ce = 0.0;
            let mut hits = 0;
            for (vol, label) in &clips {
                let (feat, cache) =
                    nets.visual.forward_cached(vol, &state.visual.online).unwrap();
                let cls = state.classifier.as_ref().unwrap();
                let logits = classifier.forward(&feat, &cls.values);
                if argmax(&logits) == *label {
                    hits += 1;
                }
                let (loss, dl) = softmax_cross_entropy(&logits, *label);
                ce += loss / 32.0;
                let dfeat = classifier.backward(&feat, &cls.values, &dl, &mut g_cls);
                nets.visual.backward(&dfeat, &cache, &state.visual.online, &mut g_vis);
            }
            let cls = state.classifier.as_mut().unwrap();
            sgd_dbg(&mut state.visual.online, &g_vis, &mut vel_v, lr, 1.0 / 32.0);
            sgd_dbg(cls, &g_cls, &mut vel_c, lr, 1.0 / 32.0);
            last_acc = hits as f64 / 32.0;
            last_ce = ce;
        }
        println!("lr {lr}: after 200 full-batch steps ce {last_ce:.4} acc {last_acc:.3}");
    }
}

fn sgd_dbg(p: &mut EncoderParams, g: &[f64], vel: &mut [f64], lr: f64, scale: f64) {
    for i in 0..p.values.len() {
        let gr = g[i] * scale;
        vel[i] = 0.9 * vel[i] + gr;
        p.values[i] -= lr * vel[i];
    }
}
