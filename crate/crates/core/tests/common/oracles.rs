//! Brute-force reference implementations used to cross-check the library.

use lesiontl_core::dataset::Label;

/// Accuracy, sensitivity, specificity by walking every sample; `None` for a
/// rate whose denominator class is absent.
pub fn brute_force_metrics(labels: &[Label], predicted: &[Label]) -> (f64, Option<f64>, Option<f64>) {
    let (mut correct, mut pos, mut pos_hit, mut neg, mut neg_hit) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for i in 0..labels.len() {
        let hit = labels[i] == predicted[i];
        if hit {
            correct += 1;
        }
        if labels[i] == Label::Melanoma {
            pos += 1;
            if hit {
                pos_hit += 1;
            }
        } else {
            neg += 1;
            if hit {
                neg_hit += 1;
            }
        }
    }
    let rate = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
    (correct as f64 / labels.len() as f64, rate(pos_hit, pos), rate(neg_hit, neg))
}

/// Reference early-stopping rule, re-derived from scratch for every prefix.
///
/// Epoch `j` (1-based) is an improvement when it is the first epoch or beats
/// the value of the previous improvement by more than `min_delta`. Training
/// stops after epoch `t` once `t - last_improvement >= max(patience, 1)`.
/// Returns the first stopping epoch (if any) and the earliest best epoch of
/// the history seen up to that point.
pub fn reference_early_stop(
    values: &[f64],
    minimise: bool,
    patience: usize,
    min_delta: f64,
) -> (Option<usize>, usize) {
    let better = |a: f64, b: f64, delta: f64| if minimise { a < b - delta } else { a > b + delta };
    for t in 1..=values.len() {
        let prefix = &values[..t];
        let mut improvements = vec![1usize];
        for j in 2..=t {
            let last = prefix[*improvements.last().unwrap() - 1];
            if better(prefix[j - 1], last, min_delta) {
                improvements.push(j);
            }
        }
        let last = *improvements.last().unwrap();
        if t - last >= patience.max(1) {
            return (Some(t), earliest_best(prefix, minimise));
        }
    }
    (None, earliest_best(values, minimise))
}

/// 1-based index of the best value, earliest among ties.
pub fn earliest_best(values: &[f64], minimise: bool) -> usize {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = values[a].partial_cmp(&values[b]).unwrap();
        let ord = if minimise { ord } else { ord.reverse() };
        ord.then(a.cmp(&b))
    });
    order[0] + 1
}

/// Closed-form parameter count of a convolution layer.
pub fn conv_params(k: usize, c_in: usize, c_out: usize) -> usize {
    k * k * c_in * c_out + c_out
}

/// Closed-form parameter count of a fully connected layer.
pub fn fc_params(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

/// Expected `(conv params, head params)` of a VGG network with the given
/// convolutions per block, a `head` of hidden widths and a 2-way output.
pub fn vgg_param_oracle(convs_per_block: &[usize], head: &[usize]) -> (usize, usize) {
    let widths = [64, 128, 256, 512, 512];
    let mut c_in = 3;
    let mut conv = 0;
    for (&n, &w) in convs_per_block.iter().zip(&widths) {
        for _ in 0..n {
            conv += conv_params(3, c_in, w);
            c_in = w;
        }
    }
    let mut n_in = 512 * 7 * 7;
    let mut fc = 0;
    for &h in head {
        fc += fc_params(n_in, h);
        n_in = h;
    }
    fc += fc_params(n_in, 2);
    (conv, fc)
}

/// Mean and population standard deviation computed the textbook way.
pub fn naive_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
