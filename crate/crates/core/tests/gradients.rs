use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskcomp::model::{loss, loss_and_grads, LmParams, ModelConfig, ParamTree, Tensor, TokenBatch, EOS};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn tiny_config() -> ModelConfig {
    ModelConfig { encoder_layers: 1, decoder_layers: 1, d_model: 16, heads: 2, d_ff: 24, max_len: 12, dropout: 0.0 }
}

fn batch() -> TokenBatch {
    TokenBatch {
        sources: vec![vec![4, 9, 10, 11, EOS], vec![5, 12, EOS]],
        targets: vec![vec![10, 11, 13], vec![12]],
    }
}

fn close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= REL_TOL * scale || (analytic - numeric).abs() < 1e-9
}

/// Indices to probe in a tensor: a few random entries plus the largest
/// analytic gradient.
fn probes(g: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.data.len();
    let mut idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..n)).collect();
    let arg = (0..n).max_by(|&a, &b| g.data[a].abs().partial_cmp(&g.data[b].abs()).unwrap()).unwrap();
    idx.push(arg);
    idx
}

#[test]
fn lm_gradients_match_central_differences() {
    let cfg = tiny_config();
    let params = LmParams::<f64>::init(&cfg, 16, 3).unwrap();
    let b = batch();
    let mut grads = params.zeros_like();
    loss_and_grads(&params, &mut grads, &b, None, None);
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grad_tensors: Vec<Tensor<f64>> = grads.named().into_iter().map(|(_, t)| t.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    for (ti, name) in names.iter().enumerate() {
        for j in probes(&grad_tensors[ti], &mut rng) {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data[j] += H;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data[j] -= H;
            let numeric = (loss(&plus, &b, None) - loss(&minus, &b, None)) / (2.0 * H);
            let analytic = grad_tensors[ti].data[j];
            assert!(close(analytic, numeric), "{name}[{j}]: analytic {analytic:e} vs numeric {numeric:e}");
            checked += 1;
        }
    }
    assert!(checked >= 5 * names.len());
}

#[test]
fn prefix_state_gradients_match_central_differences() {
    let cfg = tiny_config();
    let params = LmParams::<f64>::init(&cfg, 16, 4).unwrap();
    let b = batch();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let width = (cfg.encoder_layers + 1) * cfg.d_model;
    let prefix = vec![Tensor::randn(3, width, 1.0, &mut rng), Tensor::randn(2, width, 1.0, &mut rng)];
    let mut grads = params.zeros_like();
    let (_, dprefix) = loss_and_grads(&params, &mut grads, &b, Some(&prefix), None);
    assert_eq!(dprefix.len(), 2);
    for (pi, g) in dprefix.iter().enumerate() {
        for j in probes(g, &mut rng) {
            let mut plus = prefix.clone();
            plus[pi].data[j] += H;
            let mut minus = prefix.clone();
            minus[pi].data[j] -= H;
            let numeric = (loss(&params, &b, Some(&plus)) - loss(&params, &b, Some(&minus))) / (2.0 * H);
            assert!(close(g.data[j], numeric), "prefix {pi}[{j}]: {} vs {numeric}", g.data[j]);
        }
    }
}
