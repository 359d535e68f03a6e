use super::ImageGrid;

// Keys cubic convolution kernel, a = -0.5.
fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic resampling with pixel-centre alignment and edge clamping.
pub fn resize_bicubic(u: &ImageGrid, new_h: usize, new_w: usize) -> ImageGrid {
    assert!(new_h > 0 && new_w > 0);
    let (h, w) = (u.height(), u.width());
    let rows = taps(h, new_h);
    let cols = taps(w, new_w);
    let mut out = ImageGrid::zeros(new_h, new_w, u.channels());
    let mut tmp = vec![0.0; h * new_w];
    for c in 0..u.channels() {
        let src = u.plane(c);
        for i in 0..h {
            for (j, tap) in cols.iter().enumerate() {
                tmp[i * new_w + j] = tap.iter().map(|&(k, wt)| wt * src[i * w + k]).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (i, tap) in rows.iter().enumerate() {
            for j in 0..new_w {
                dst[i * new_w + j] = tap.iter().map(|&(k, wt)| wt * tmp[k * new_w + j]).sum();
            }
        }
    }
    out
}

fn taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let x = (o as f64 + 0.5) * scale - 0.5;
            let x0 = x.floor() as i64;
            let mut t: Vec<(usize, f64)> = (x0 - 1..=x0 + 2)
                .map(|k| {
                    let idx = k.clamp(0, n_in as i64 - 1) as usize;
                    (idx, cubic(x - k as f64))
                })
                .collect();
            let s: f64 = t.iter().map(|p| p.1).sum();
            for p in &mut t {
                p.1 /= s;
            }
            t
        })
        .collect()
}
