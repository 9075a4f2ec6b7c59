//! Direct nested-loop reference for the CNN forward pass, in f64 and
//! channels-first layout, sharing no code with the engine.

use half::f16;
use ifdet_core::model::WeightBundle;

struct Act {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Act {
    fn at(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            0.0
        } else {
            self.data[(c * self.h + y as usize) * self.w + x as usize]
        }
    }
}

fn tensor<'a>(b: &'a WeightBundle, name: &str) -> &'a [f32] {
    &b.tensor(name)
        .unwrap_or_else(|| panic!("missing {name}"))
        .data
}

fn conv_relu(x: &Act, weight: &[f32], bias: &[f32]) -> Act {
    let cout = bias.len();
    let mut data = vec![0.0; cout * x.h * x.w];
    for o in 0..cout {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut s = bias[o] as f64;
                for c in 0..x.c {
                    for kh in 0..3 {
                        for kw in 0..3 {
                            let wv = weight[((o * x.c + c) * 3 + kh) * 3 + kw] as f64;
                            s += wv
                                * x.at(
                                    c,
                                    y as isize + kh as isize - 1,
                                    xx as isize + kw as isize - 1,
                                );
                        }
                    }
                }
                data[(o * x.h + y) * x.w + xx] = s.max(0.0);
            }
        }
    }
    Act {
        c: cout,
        h: x.h,
        w: x.w,
        data,
    }
}

fn pool(x: &Act) -> Act {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut data = vec![0.0; x.c * h * w];
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at(c, (2 * y + dy) as isize, (2 * xx + dx) as isize));
                    }
                }
                data[(c * h + y) * w + xx] = m;
            }
        }
    }
    Act { c: x.c, h, w, data }
}

/// Logits for one input. Flatten order is (height, width, channel),
/// followed by the z-scored scalars.
pub fn logits(b: &WeightBundle, iq: &[f16], scalars: &[f32; 7]) -> Vec<f64> {
    let (h, w) = (b.config.input.symbols, b.config.input.subcarriers);
    let mut data = vec![0.0; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..2 {
                data[(c * h + y) * w + x] = iq[(y * w + x) * 2 + c].to_f64();
            }
        }
    }
    let mut a = Act { c: 2, h, w, data };
    a = conv_relu(&a, tensor(b, "conv1a.weight"), tensor(b, "conv1a.bias"));
    a = conv_relu(&a, tensor(b, "conv1b.weight"), tensor(b, "conv1b.bias"));
    a = pool(&a);
    a = conv_relu(&a, tensor(b, "conv2a.weight"), tensor(b, "conv2a.bias"));
    a = conv_relu(&a, tensor(b, "conv2b.weight"), tensor(b, "conv2b.bias"));
    a = pool(&a);

    let mut flat = Vec::with_capacity(a.c * a.h * a.w + 7);
    for y in 0..a.h {
        for x in 0..a.w {
            for c in 0..a.c {
                flat.push(a.data[(c * a.h + y) * a.w + x]);
            }
        }
    }
    for (j, &v) in scalars.iter().enumerate() {
        flat.push((v as f64 - b.scalar_mean[j] as f64) / b.scalar_std[j] as f64);
    }
    let dw = tensor(b, "dense.weight");
    let db = tensor(b, "dense.bias");
    let n = flat.len();
    (0..db.len())
        .map(|o| db[o] as f64 + (0..n).map(|i| dw[o * n + i] as f64 * flat[i]).sum::<f64>())
        .collect()
}
