use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::io::{generate_synthetic, Checkpoint, Dataset, SynthTaskSpec};
use crate::model::{FrontendSpec, Model, ModelConfig, QuantHooks, Session, Variant, BOS_ID};
use crate::numcore::Tensor;

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        d_model: 8,
        heads: 2,
        d_ff: 16,
        vocab_size: 8,
        feature_dim: 8,
        dropout: 0.0,
        frontend: FrontendSpec {
            channels: 2,
            ..FrontendSpec::default()
        },
        ..ModelConfig::toy(variant)
    }
    .with_variant(variant)
}

fn tiny_data(n: usize, seed: u64) -> Dataset {
    let spec = SynthTaskSpec {
        vocab_size: 8,
        feature_dim: 8,
        seed,
        ..SynthTaskSpec::default()
    };
    generate_synthetic(&spec, n).unwrap()
}

fn opts() -> CalibrationOptions {
    CalibrationOptions {
        batch_frames: 60,
        ..CalibrationOptions::default()
    }
}

fn ptq(config: ModelConfig, seed: u64, steps: usize) -> (Checkpoint, Checkpoint, Dataset) {
    let model = Model::new(config, seed).unwrap();
    let fp = model.to_checkpoint("fp32", 0).unwrap();
    let data = tiny_data(12, seed);
    let q = ptq_calibrate(&fp, &data, steps, &opts()).unwrap();
    (fp, q, data)
}

fn hand_enumeration() -> Vec<String> {
    let mut names: Vec<String> = [
        "frontend.conv1.weight",
        "frontend.conv2.weight",
        "frontend.proj.weight",
        "decoder.embed.weight",
        "output.proj.weight",
        "frontend.input",
        "frontend.conv1.output",
        "frontend.conv2.output",
        "frontend.output",
        "decoder.input",
        "output.logits",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let attn = |p: &str| {
        let mut v: Vec<String> = ["q_proj", "k_proj", "v_proj", "out_proj"]
            .iter()
            .map(|w| format!("{p}.{w}.weight"))
            .collect();
        v.extend(
            ["query", "key", "value", "scores", "probs", "context", "output"]
                .iter()
                .map(|a| format!("{p}.{a}")),
        );
        v
    };
    let ffn = |p: &str| {
        ["w1.weight", "w2.weight", "hidden", "output"]
            .iter()
            .map(|a| format!("{p}.{a}"))
            .collect::<Vec<_>>()
    };
    names.extend(attn("encoder.0.self_attn"));
    names.extend(ffn("encoder.0.ffn"));
    names.extend(["encoder.0.norm1.output".into(), "encoder.0.norm2.output".into()]);
    names.extend(attn("decoder.0.self_attn"));
    names.extend(attn("decoder.0.cross_attn"));
    names.extend(ffn("decoder.0.ffn"));
    for n in 1..=3 {
        names.push(format!("decoder.0.norm{n}.output"));
    }
    names.sort();
    names
}

#[test]
fn site_map_matches_hand_enumeration() {
    let map = build_site_map(&tiny(Variant::Proposed)).unwrap();
    let names: Vec<String> = map.iter().map(|(n, _)| n.to_string()).collect();
    assert_eq!(names, hand_enumeration());
    assert_eq!((map.count(SiteKind::Weight), map.count(SiteKind::Activation)), (21, 36));
    assert!(names.iter().all(|n| !n.contains("residual") && !n.contains("add")));
    assert_eq!(build_site_map(&tiny(Variant::Proposed)).unwrap(), map);
}

#[test]
fn every_product_is_audited_and_quantized() {
    for v in Variant::ALL {
        let config = tiny(v);
        let (_, q, data) = ptq(config, 1, 3);
        let (model, map) = simulation_parts(&q).unwrap();
        let u = &data.utterances[0];
        let mut input = vec![BOS_ID];
        input.extend_from_slice(&u.tokens);
        let mut s = Session::inference(&model, QuantHooks::simulate(&map)).with_audit();
        s.forward(&u.features, &input).unwrap();
        let audit = s.take_audit();
        map.check_audit(&audit, s.stats()).unwrap();
        // an unquantized operand is caught
        let mut bad = audit.clone();
        bad[0].lhs_quantized = false;
        assert!(matches!(map.check_audit(&bad, s.stats()), Err(Error::Audit(_))));
        // a product the map does not know is caught
        let mut bad = audit;
        bad[0].site = "somewhere.else".into();
        assert!(matches!(map.check_audit(&bad, s.stats()), Err(Error::Audit(_))));
    }
}

#[test]
fn disabling_a_site_only_changes_that_site() {
    let (_, q, data) = ptq(tiny(Variant::Proposed), 2, 3);
    let (model, map) = simulation_parts(&q).unwrap();
    let u = &data.utterances[0];
    let trace = |m: &QuantSiteMap| {
        let mut s = Session::inference(&model, QuantHooks::simulate(m)).capture_sites();
        s.encode(&u.features).unwrap();
        s.take_trace()
    };
    let base = trace(&map);
    let mut off = map.clone();
    off.set_enabled("encoder.0.ffn.output", false).unwrap();
    let other = trace(&off);
    for ((n, a), (_, b)) in base.iter().zip(&other) {
        if n.starts_with("encoder.0.ffn.output") || n.starts_with("encoder.0.norm2") {
            continue;
        }
        assert_eq!(a, b, "{n} changed");
    }
    let idx = base.iter().position(|(n, _)| n == "encoder.0.ffn.output").unwrap();
    let p = map.get("encoder.0.ffn.output").unwrap().params.unwrap();
    assert!(other[idx].1.data().iter().any(|&v| p.fake(v) != v));
}

#[test]
fn ptq_leaves_weights_alone() {
    let (fp, q, _) = ptq(tiny(Variant::Proposed), 3, 4);
    let map = build_site_map(&tiny(Variant::Proposed)).unwrap();
    for (name, t) in &fp.tensors {
        let stored = &q.tensors[name];
        match map.get(name).map(|s| s.kind) {
            Some(SiteKind::Weight) => {
                let w = t.to_tensor();
                let p = crate::quant::weight_range(&w).unwrap();
                assert_eq!(stored, &crate::io::StoredTensor::Q8(crate::quant::QuantizedTensor::quantize(&w, p)));
            }
            _ => assert_eq!(stored, t, "{name}"),
        }
    }
    assert!(is_calibrated(&q));
    assert!(q.meta.sites.values().all(|s| s.params.is_some()));
}

#[test]
fn constant_stream_calibrates_to_its_range() {
    let model = Model::new(tiny(Variant::Proposed), 4).unwrap();
    let fp = model.to_checkpoint("fp32", 0).unwrap();
    let mut data = tiny_data(1, 4);
    let (t, f) = data.utterances[0].features.dims2().unwrap();
    data.utterances[0].features = Tensor::full(&[t, f], 0.75);
    let q = ptq_calibrate(&fp, &data, 7, &opts()).unwrap();
    let site = &q.meta.sites["frontend.input"];
    let tr = site.tracker.unwrap();
    assert_eq!((tr.running_min, tr.running_max), (0.75, 0.75));
    assert_eq!(site.params, tr.params(8));
}

#[test]
fn zero_steps_is_flagged_and_refused() {
    let (_, q, data) = ptq(tiny(Variant::Proposed), 5, 0);
    assert!(!is_calibrated(&q));
    assert!(matches!(load_quantized(&q, false), Err(Error::Uncalibrated(_))));
    let m = load_quantized(&q, true).unwrap();
    // every activation grid collapsed around zero: outputs carry no signal
    let u = &data.utterances[0];
    let a = m.forward(&u.features, &[BOS_ID]).unwrap();
    let b = m.forward(&data.utterances[1].features, &[BOS_ID]).unwrap();
    assert_eq!(a, b);
    assert!(a.data().iter().all(|v| v.abs() < 1e-7));
    // no data at all is a contract violation once steps are requested
    let fp = Model::new(tiny(Variant::Proposed), 5).unwrap().to_checkpoint("fp32", 0).unwrap();
    assert!(matches!(
        ptq_calibrate(&fp, &Dataset::default(), 3, &opts()),
        Err(Error::Contract(_))
    ));
}

fn qat_checkpoint(seed: u64, steps: usize) -> (Checkpoint, Dataset) {
    let model = Model::new(tiny(Variant::Proposed), seed).unwrap();
    let data = tiny_data(12, seed);
    let mut map = build_site_map(&model.config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        let u = &data.utterances[rng.gen_range(0..data.len())];
        let mut input = vec![BOS_ID];
        input.extend_from_slice(&u.tokens);
        let hooks = QuantHooks {
            weights: true,
            observe: true,
            activations: None,
            weight_source: None,
        };
        let mut s = Session::inference(&model, hooks);
        s.forward(&u.features, &input).unwrap();
        map.observe(s.stats()).unwrap();
    }
    let mut ck = model.to_checkpoint("qat", steps as u64).unwrap();
    ck.meta.sites = map.to_records();
    (ck, data)
}

#[test]
fn finalize_single_checkpoint_without_steps_keeps_its_ranges() {
    let (ck, data) = qat_checkpoint(6, 5);
    let out = qat_finalize(std::slice::from_ref(&ck), &data, 0, &opts()).unwrap();
    for (name, rec) in &ck.meta.sites {
        if let Some(t) = rec.tracker {
            assert_eq!(out.meta.sites[name].params, t.params(8), "{name}");
        }
    }
    assert!(is_calibrated(&out));
}

#[test]
fn finalize_weights_equal_the_average() {
    let (a, data) = qat_checkpoint(7, 3);
    let (mut b, _) = qat_checkpoint(8, 4);
    b.set_attr(crate::train::ATTR_NAME, "b");
    let avg = crate::train::checkpoint_average(&[a.clone(), b.clone()]).unwrap();
    let out = qat_finalize(&[a, b], &data, 3, &opts()).unwrap();
    let map = build_site_map(&tiny(Variant::Proposed)).unwrap();
    for (name, t) in &avg.tensors {
        match map.get(name).map(|s| s.kind) {
            Some(SiteKind::Weight) => {
                let w = t.to_tensor();
                let p = crate::quant::weight_range(&w).unwrap();
                assert_eq!(out.tensors[name].to_tensor(), crate::quant::fake_quant(&w, &p));
            }
            _ => assert_eq!(&out.tensors[name], t),
        }
    }
}

#[test]
fn finalize_needs_trackers() {
    let model = Model::new(tiny(Variant::Proposed), 9).unwrap();
    let ck = model.to_checkpoint("fp32", 0).unwrap();
    assert!(matches!(qat_finalize(&[ck], &tiny_data(4, 9), 1, &opts()), Err(Error::Contract(_))));
}

#[test]
fn adjusted_ranges_stay_in_the_hull() {
    let (ck, data) = qat_checkpoint(10, 4);
    let model = Model::from_checkpoint(&ck).unwrap();
    let mut map = build_site_map(&model.config).unwrap();
    map.load_records(&ck.meta.sites).unwrap();
    let batches = super::calibrate::observe_steps(&model, &mut map, &data, 6, &opts(), true).unwrap();
    assert_eq!(batches.len(), 6);
    let mut checked = 0;
    for (name, rec) in &ck.meta.sites {
        let Some(init) = rec.tracker else { continue };
        let fin = map.get(name).unwrap().tracker;
        let lo = batches.iter().filter_map(|b| b.get(name)).map(|r| r.0).fold(init.running_min, f64::min);
        let hi = batches.iter().filter_map(|b| b.get(name)).map(|r| r.1).fold(init.running_max, f64::max);
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        assert!(fin.running_min >= lo - tol && fin.running_min <= hi + tol, "{name}");
        assert!(fin.running_max >= lo - tol && fin.running_max <= hi + tol, "{name}");
        checked += 1;
    }
    assert_eq!(checked, 36);
}

fn sim_trace(q: &Checkpoint, features: &Tensor, input: &[u32]) -> (Tensor, Vec<(String, Tensor)>) {
    let (model, map) = simulation_parts(q).unwrap();
    let mut s = Session::inference(&model, QuantHooks::simulate(&map)).capture_sites();
    let y = s.forward(features, input).unwrap();
    let y = s.value(y).clone();
    (y, s.take_trace())
}

#[test]
fn integer_sites_match_simulation_within_one_step() {
    for seed in 0..6 {
        for v in Variant::ALL {
            let (_, q, data) = ptq(tiny(v), 100 + seed, 4);
            let m = QuantizedModel::from_checkpoint(&q).unwrap();
            let u = &data.utterances[seed as usize % data.len()];
            let mut input = vec![BOS_ID];
            input.extend_from_slice(&u.tokens);
            let (_, reference) = sim_trace(&q, &u.features, &input);
            let got = m.replay(&u.features, &input, &reference).unwrap();
            assert_eq!(got.len(), reference.len());
            for ((name, a), (_, b)) in got.iter().zip(&reference) {
                let d = m.site_params(name).unwrap().delta();
                assert!(a.max_abs_diff(b) <= d * (1.0 + 1e-9), "{v} seed {seed} {name}");
            }
        }
    }
}

#[test]
fn integer_path_is_deterministic() {
    let (_, q, data) = ptq(tiny(Variant::Proposed), 11, 4);
    let m = QuantizedModel::from_checkpoint(&q).unwrap();
    let u = &data.utterances[0];
    let a = m.forward_traced(&u.features, &[BOS_ID, 3, 4]).unwrap();
    let b = m.forward_traced(&u.features, &[BOS_ID, 3, 4]).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn missing_site_params_are_refused() {
    let (_, mut q, _) = ptq(tiny(Variant::Proposed), 12, 2);
    q.meta.sites.get_mut("encoder.0.ffn.hidden").unwrap().params = None;
    q.meta.sites.get_mut("encoder.0.ffn.hidden").unwrap().tracker = None;
    assert!(matches!(QuantizedModel::from_checkpoint(&q), Err(Error::Contract(_))));
}

#[test]
fn end_to_end_logits_stay_within_ten_steps() {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (_, q, data) = ptq(tiny(Variant::Proposed), 200 + seed, 4);
        let m = QuantizedModel::from_checkpoint(&q).unwrap();
        let d = m.site_params("output.logits").unwrap().delta();
        for u in data.utterances.iter().take(3) {
            let mut input = vec![BOS_ID];
            input.extend_from_slice(&u.tokens);
            let (want, _) = sim_trace(&q, &u.features, &input);
            let got = m.forward(&u.features, &input).unwrap();
            worst = worst.max(got.max_abs_diff(&want) / d);
        }
    }
    eprintln!("worst end-to-end logit gap: {worst:.2} steps");
    assert!(worst < 10.0, "{worst}");
}
