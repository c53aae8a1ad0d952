use taskcomp::composition::{PrefixBank, PrefixCompose, PrefixConfig};
use taskcomp::model::*;
use taskcomp::taskgen::{AtomicTask, TaskId};

fn small() -> ModelConfig {
    ModelConfig { encoder_layers: 1, decoder_layers: 1, d_model: 32, heads: 2, d_ff: 64, max_len: 16, dropout: 0.0 }
}

fn item(task: AtomicTask, source: &[u32], target: &[u32]) -> TrainItem {
    let mut s = source.to_vec();
    s.push(EOS);
    TrainItem { task: TaskId::Atomic(task), source: s, target: target.to_vec() }
}

fn no_valid(steps: usize) -> TrainConfig {
    TrainConfig { max_steps: steps, eval_every: 0, warmup_steps: 10, batch_size: 1, ..TrainConfig::default() }
}

#[test]
fn overfits_a_single_example() {
    let mut params = LmParams::<f32>::init(&small(), 20, 3).unwrap();
    let items = [item(AtomicTask::Tfu, &[5, 6, 7, 8], &[9, 10, 11, 12, 13])];
    let log = train(&mut params, &items, &[], &no_valid(300), None).unwrap();
    let batch = TokenBatch { sources: vec![items[0].source.clone()], targets: vec![items[0].target.clone()] };
    let final_loss = loss(&params, &batch, None);
    assert!(final_loss < 0.01, "loss {final_loss}");
    // Five-step block means never rise after warmup.
    let means: Vec<f64> =
        log.steps[10..].chunks(5).map(|c| c.iter().map(|s| s.loss).sum::<f64>() / c.len() as f64).collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "block mean rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn padding_does_not_change_an_example_logits() {
    let params = LmParams::<f64>::init(&small(), 20, 4).unwrap();
    let short = (vec![5, 6, EOS], vec![7, 8]);
    let long = (vec![5, 9, 10, 11, 12, EOS], vec![7, 8, 13, 14, 15]);
    let alone = teacher_forced_logits(&params, &TokenBatch { sources: vec![short.0.clone()], targets: vec![short.1.clone()] }, None);
    let mixed = teacher_forced_logits(
        &params,
        &TokenBatch { sources: vec![long.0, short.0], targets: vec![long.1, short.1] },
        None,
    );
    let t_alone = alone.rows;
    let t_mixed = mixed.rows / 2;
    for i in 0..t_alone {
        for (a, b) in alone.row(i).iter().zip(mixed.row(t_mixed + i)) {
            assert!((a - b).abs() < 1e-10, "position {i}: {a} vs {b}");
        }
    }
}

#[test]
fn every_visible_task_appears_in_the_batch_log() {
    let tiny = ModelConfig { d_model: 8, heads: 1, d_ff: 8, ..small() };
    let mut params = LmParams::<f32>::init(&tiny, 20, 5).unwrap();
    let items: Vec<TrainItem> = AtomicTask::ALL
        .iter()
        .enumerate()
        .flat_map(|(i, &t)| (0..20).map(move |j| item(t, &[4 + i as u32, 4 + j as u32 % 15], &[5])))
        .collect();
    let cfg = TrainConfig { batch_size: 8, ..no_valid(1000) };
    let log = train(&mut params, &items, &[], &cfg, None).unwrap();
    assert_eq!(log.steps.len(), 1000);
    for t in AtomicTask::ALL {
        let seen: usize = log.steps.iter().map(|s| s.tasks.get(&TaskId::Atomic(t)).copied().unwrap_or(0)).sum();
        assert!(seen > 0, "{t} never sampled");
    }
    // Batches mix tasks rather than cycling through them one at a time.
    assert!(log.steps.iter().filter(|s| s.tasks.len() > 1).count() > 900);
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let mut params = LmParams::<f32>::init(&small(), 20, 6).unwrap();
    let before = params.clone();
    let items = [item(AtomicTask::Tfu, &[5, 6], &[7])];
    let log = train(&mut params, &items, &[], &no_valid(0), None).unwrap();
    assert!(log.steps.is_empty());
    assert_eq!(params, before);
}

#[test]
fn training_is_deterministic_under_seed() {
    let items: Vec<TrainItem> = (0..12).map(|i| item(AtomicTask::Ppr, &[5 + i % 7, 6], &[7 + i % 5])).collect();
    let cfg = TrainConfig { batch_size: 4, ..no_valid(20) };
    let run = || {
        let mut p = LmParams::<f32>::init(&ModelConfig { dropout: 0.1, ..small() }, 20, 7).unwrap();
        let log = train(&mut p, &items, &[], &cfg, None).unwrap();
        (p, log)
    };
    assert_eq!(run(), run());
}

#[test]
fn decoding_survives_a_checkpoint_round_trip() {
    let vocab = Vocab::build(&taskcomp::taskgen::Lexicon::full());
    let mut params = LmParams::<f32>::init(&small(), vocab.len(), 8).unwrap();
    let items: Vec<TrainItem> = (0..8).map(|i| item(AtomicTask::Tpa, &[5 + i, 6], &[7 + i, 8])).collect();
    train(&mut params, &items, &[], &TrainConfig { batch_size: 4, ..no_valid(30) }, None).unwrap();
    let sources: Vec<Vec<u32>> = items.iter().map(|i| i.source.clone()).collect();
    let before = greedy_decode_batch(&params, &sources, None, 10);
    assert_eq!(before, greedy_decode_batch(&params, &sources, None, 10));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint { params, vocab, extra_meta: serde_json::Value::Null, extra: Vec::new() };
    save_checkpoint(&path, &ck).unwrap();
    let loaded: Checkpoint<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(greedy_decode_batch(&loaded.params, &sources, None, 10), before);
}

#[test]
fn decoding_terminates_on_an_empty_source() {
    let params = LmParams::<f32>::init(&small(), 20, 9).unwrap();
    let out = greedy_decode_batch(&params, &[vec![EOS]], None, 15);
    assert!(out[0].len() <= 15);
}

#[test]
fn prefix_training_freezes_the_language_model() {
    let cfg = small();
    let mut params = LmParams::<f32>::init(&cfg, 20, 10).unwrap();
    let before = params.clone();
    let pcfg = PrefixConfig { length: 2, width: 32, hidden: 16, compose: PrefixCompose::Concat2L, composer_noise: 0.01 };
    let mut bank = PrefixBank::<f32>::new(pcfg, &cfg, &AtomicTask::ALL, 1).unwrap();
    let bank_before = bank.params.clone();
    let mut items: Vec<TrainItem> = (0..6).map(|i| item(AtomicTask::Tfu, &[5 + i, 6], &[7])).collect();
    items.push(TrainItem {
        task: TaskId::composite(AtomicTask::Tfu, AtomicTask::Ppr).unwrap(),
        source: vec![5, 9, EOS],
        target: vec![11],
    });
    let tc = TrainConfig { batch_size: 4, ..no_valid(15) };
    train(&mut params, &items, &[], &tc, Some(&mut bank)).unwrap();
    assert_eq!(params, before);
    assert_ne!(bank.params.prefixes[&AtomicTask::Tfu], bank_before.prefixes[&AtomicTask::Tfu]);
    assert_ne!(bank.params.eta, bank_before.eta);
    assert_eq!(bank.params.prefixes[&AtomicTask::Arr], bank_before.prefixes[&AtomicTask::Arr]);
}
