use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{synth_dataset, Dataset};
use crate::encoder::{HashEncoder, HashEncoderConfig};
use crate::model::Structure;

fn fixture(structure: Structure, dim: usize) -> (JointModel, LabelSpace, Dataset) {
    let (data, labels) = synth_dataset(1, 3, 3, 6, 12).unwrap();
    let enc = HashEncoder::new(HashEncoderConfig { buckets: 512, dim, orders: vec![1, 2] }, 4).unwrap();
    let model = JointModel::new(structure, labels.num_domains(), labels.num_intents(), Encoder::Hashed(enc), 8).unwrap();
    (model, labels, data)
}

#[test]
fn argmax_ties_go_low() {
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    assert_eq!(argmax(&[0.5, 0.5]), 0);
    assert_eq!(argmax(&[0.1, 0.3, 0.6]), 2);
    assert_eq!(argmax(&[1.0]), 0);
}

#[test]
fn threshold_rules() {
    let (_, labels, _) = fixture(Structure::HierDomainFirst, 4);
    let n = labels.num_intents();
    let oos = labels.oos_intent();
    let mut p = vec![0.75 / (n - 1) as f64; n];
    p[0] = 0.25;
    p[oos] = 0.0;
    let pd = vec![0.5, 0.3, 0.1, 0.1];

    let (_, intent, rejected) = decide(Some(&pd), &p, &labels, &ThresholdConfig::new(0.3).unwrap());
    assert!(rejected);
    assert_eq!(intent, oos);

    let (d0, i0, r0) = decide(Some(&pd), &p, &labels, &ThresholdConfig::none());
    assert_eq!((d0, i0, r0), (argmax(&pd), argmax(&p), false));

    let (_, i1, _) = decide(Some(&pd), &p, &labels, &ThresholdConfig::new(1.0).unwrap());
    assert_eq!(i1, oos);
    let mut certain = vec![0.0; n];
    certain[1] = 1.0;
    assert_eq!(decide(None, &certain, &labels, &ThresholdConfig::new(1.0).unwrap()).1, 1);

    // the domain head is only thresholded when asked
    let th = ThresholdConfig { tau: 0.6, domain: false };
    assert_eq!(decide(Some(&pd), &p, &labels, &th).0, 0);
    let th = ThresholdConfig { tau: 0.6, domain: true };
    assert_eq!(decide(Some(&pd), &p, &labels, &th).0, labels.oos_domain());

    // without a domain head the domain follows the intent
    assert_eq!(decide(None, &p, &labels, &ThresholdConfig::new(0.3).unwrap()).0, labels.oos_domain());
    assert!(ThresholdConfig::new(1.5).is_err());
    assert!(ThresholdConfig::new(-0.1).is_err());
}

#[test]
fn metrics_worked_example() {
    // labels: 0 = oos, 1 = a, 2 = b, 3 = c
    let golds = [0, 0, 0, 0, 1, 1, 2, 2, 3, 3];
    let preds = [0, 0, 0, 1, 0, 1, 2, 2, 3, 3];
    let r = compute_metrics(&preds, &golds, 0).unwrap();
    assert_eq!(r.accuracy_all, 0.8);
    assert_eq!(r.accuracy_in, 5.0 / 6.0);
    assert_eq!(r.oos_precision, 0.75);
    assert_eq!(r.oos_recall, 0.75);
    assert_eq!(r.oos_f1, 0.75);
    assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_, r.counts.tn), (3, 1, 1, 5));
}

#[test]
fn metrics_edge_cases() {
    let golds = [0, 1, 2, 0];
    let r = compute_metrics(&golds, &golds, 0).unwrap();
    assert_eq!(
        [r.accuracy_all, r.accuracy_in, r.oos_precision, r.oos_recall, r.oos_f1],
        [1.0; 5]
    );
    let r = compute_metrics(&[1, 1, 2, 1], &golds, 0).unwrap();
    assert_eq!((r.oos_precision, r.oos_recall, r.oos_f1), (0.0, 0.0, 0.0));
    assert!(matches!(compute_metrics(&[0], &[0, 1], 0), Err(Error::Data(_))));
}

#[test]
fn report_json_round_trip() {
    let r = compute_metrics(&[0, 0, 0, 1, 0, 1, 2, 2, 3, 3], &[0, 0, 0, 0, 1, 1, 2, 2, 3, 3], 0).unwrap();
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"fn\":1"));
    assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
}

#[test]
fn grid_parsing() {
    let g = parse_grid("0.1:0.9:0.1").unwrap();
    assert_eq!(g, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
    assert_eq!(parse_grid("0:1:0.25").unwrap(), [0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(parse_grid("0.3").unwrap(), [0.3]);
    assert_eq!(parse_grid("0.1,0.5").unwrap(), [0.1, 0.5]);
    for bad in ["0.9:0.1:0.1", "0.1:0.9:0", "0.1:0.9:-0.1", "0.1:0.9", "a:b:c", "0.5,0.2", "0.1:1.5:0.1", ""] {
        assert!(matches!(parse_grid(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn sweep_rows_and_monotone_recall() {
    let (model, labels, data) = fixture(Structure::HierDomainFirst, 8);
    let feats = features(&model, None).unwrap();
    let grid = parse_grid("0.1:0.9:0.1").unwrap();
    let rows = threshold_sweep(&model, &labels, feats, &data.test, &grid).unwrap();
    assert_eq!(rows.len(), 9);
    for w in rows.windows(2) {
        assert!(w[1].report.oos_recall >= w[0].report.oos_recall);
        assert!(w[1].report.counts.tp + w[1].report.counts.fp >= w[0].report.counts.tp + w[0].report.counts.fp);
    }
    // an untrained model is near uniform, so everything is rejected at 0.9
    assert_eq!(rows[8].report.oos_recall, 1.0);

    let at0 = evaluate(&model, &labels, feats, &data.test, &ThresholdConfig::none()).unwrap();
    let probs = forward_all(&model, feats, &data.test).unwrap();
    let plain: Vec<usize> = probs.iter().map(|(_, p)| argmax(p)).collect();
    let golds: Vec<usize> = data.test.iter().map(|e| e.intent).collect();
    assert_eq!(at0, compute_metrics(&plain, &golds, labels.oos_intent()).unwrap());

    assert!(threshold_sweep(&model, &labels, feats, &data.test, &[0.5, 0.2]).is_err());
}

#[test]
fn best_row_prefers_high_f1_then_low_tau() {
    let mk = |tau, tp, fp, fn_| SweepRow {
        tau,
        report: EvalReport::from_counts(Counts { tp, fp, fn_, ..Counts::default() }),
    };
    let rows = [mk(0.1, 1, 3, 3), mk(0.2, 3, 1, 1), mk(0.3, 3, 1, 1), mk(0.4, 2, 0, 2)];
    assert_eq!(best_row(&rows).unwrap().tau, 0.2);
    assert!(best_row(&[]).is_none());

    let tsv = sweep_tsv(&rows);
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some(SWEEP_HEADER));
    let parsed: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<f64> = l.split('\t').map(|v| v.parse().unwrap()).collect();
            assert_eq!(f.len(), 6);
            (f[0], f[5])
        })
        .collect();
    let mut scan = parsed[0];
    for &(tau, f1) in &parsed[1..] {
        if f1 > scan.1 {
            scan = (tau, f1);
        }
    }
    assert_eq!(scan.0, best_row(&rows).unwrap().tau);
}

#[test]
fn representation_export_shape_and_round_trip() {
    for structure in [Structure::HierDomainFirst, Structure::FlatShared] {
        let (model, labels, data) = fixture(structure, 6);
        let feats = features(&model, None).unwrap();
        let examples = &data.valid[..7];
        let mut buf = Vec::new();
        write_representations(&model, &labels, feats, examples, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 7);
        for (row, ex) in rows.iter().zip(examples) {
            let f: Vec<&str> = row.split('\t').collect();
            assert_eq!(f.len(), 3 + 2 * 6);
            assert_eq!(f[0], ex.text);
            assert_eq!(f[2], labels.intents()[ex.intent]);
            let v: Vec<f32> = f[3..].iter().map(|s| s.parse().unwrap()).collect();
            let out = model.forward(&feats.pooled(&ex.text).unwrap()).unwrap();
            let expect: Vec<f32> = out.d.iter().chain(&out.t).map(|&x| x as f32).collect();
            assert_eq!(v, expect);
            if structure == Structure::FlatShared {
                assert_eq!(f[3..9], f[9..]);
            }
        }
    }
}

#[test]
fn export_reports_write_failure() {
    let (model, labels, data) = fixture(Structure::FlatSplit, 4);
    let feats = features(&model, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("missing").join("out.tsv");
    assert!(matches!(
        export_representations(&model, &labels, feats, &data.valid, &bad),
        Err(Error::Io { path, .. }) if path == bad
    ));
}

#[test]
fn external_models_need_a_matching_store() {
    let (_, labels, _) = fixture(Structure::FlatSplit, 4);
    let model = JointModel::new(Structure::FlatSplit, labels.num_domains(), labels.num_intents(), Encoder::External { dim: 3 }, 0).unwrap();
    assert!(matches!(features(&model, None), Err(Error::Config(_))));
    let wrong = EmbeddingStore::new(5).unwrap();
    assert!(matches!(features(&model, Some(&wrong)), Err(Error::Data(_))));
    let right = EmbeddingStore::new(3).unwrap();
    assert!(features(&model, Some(&right)).is_ok());
}

fn brute_force(preds: &[usize], golds: &[usize], oos: usize) -> (usize, usize, usize, usize, usize, usize) {
    let mut correct = 0;
    let mut in_total = 0;
    let mut in_correct = 0;
    let mut pred_oos = 0;
    let mut gold_oos = 0;
    let mut both = 0;
    for i in 0..golds.len() {
        if preds[i] == golds[i] {
            correct += 1;
        }
        if golds[i] != oos {
            in_total += 1;
            if preds[i] == golds[i] {
                in_correct += 1;
            }
        }
        if preds[i] == oos {
            pred_oos += 1;
        }
        if golds[i] == oos {
            gold_oos += 1;
            if preds[i] == oos {
                both += 1;
            }
        }
    }
    (correct, in_total, in_correct, pred_oos, gold_oos, both)
}

proptest! {
    #[test]
    fn metrics_match_brute_force(
        pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60),
        oos in 0usize..5,
    ) {
        let (preds, golds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = compute_metrics(&preds, &golds, oos).unwrap();
        let (correct, in_total, in_correct, pred_oos, gold_oos, both) = brute_force(&preds, &golds, oos);
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        prop_assert_eq!(r.accuracy_all, div(correct, golds.len()));
        prop_assert_eq!(r.accuracy_in, div(in_correct, in_total));
        prop_assert_eq!(r.oos_precision, div(both, pred_oos));
        prop_assert_eq!(r.oos_recall, div(both, gold_oos));
        let (c, total) = (r.counts.correct, r.counts.total);
        prop_assert_eq!(c, r.counts.in_correct + r.counts.tp);
        prop_assert_eq!(total, golds.len());
        prop_assert!(r.oos_f1 <= r.oos_precision.max(r.oos_recall) + 1e-15);
        if r.oos_precision + r.oos_recall == 0.0 {
            prop_assert_eq!(r.oos_f1, 0.0);
        }
    }

    #[test]
    fn recall_never_drops_as_tau_rises(seed in any::<u64>(), n in 2usize..8) {
        let (_, labels, _) = fixture(Structure::FlatSplit, 4);
        let n = n.min(labels.num_intents());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs: Vec<(Option<Vec<f64>>, Vec<f64>)> = (0..40)
            .map(|_| {
                let raw: Vec<f64> = (0..labels.num_intents()).map(|i| if i < n { rng.gen::<f64>() } else { 0.0 }).collect();
                let s: f64 = raw.iter().sum();
                (None, raw.into_iter().map(|v| v / s).collect())
            })
            .collect();
        let golds: Vec<usize> = (0..40).map(|_| rng.gen_range(0..labels.num_intents())).collect();
        let mut prev = -1.0;
        for tau in parse_grid("0:1:0.05").unwrap() {
            let r = report_at(&probs, &golds, &labels, &ThresholdConfig { tau, domain: false }).unwrap();
            prop_assert!(r.oos_recall >= prev);
            prev = r.oos_recall;
        }
    }
}
