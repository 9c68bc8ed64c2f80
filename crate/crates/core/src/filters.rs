//! Separable Gaussian smoothing on dense 3D arrays (`x` fastest).

use rayon::prelude::*;

/// Unnormalized taps `exp(-k²/2σ²)` for `k = -radius..=radius`.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn pass(data: &[f64], dims: [usize; 3], axis: usize, taps: &[f64]) -> Vec<f64> {
    let n = dims[axis];
    if n == 1 {
        return data.to_vec();
    }
    let radius = (taps.len() / 2) as isize;
    let slab = dims[0] * dims[1];
    let mut out = vec![0.0; data.len()];
    match axis {
        0 | 1 => {
            let stride = if axis == 0 { 1 } else { dims[0] };
            let (count, step) = if axis == 0 { (dims[1], dims[0]) } else { (dims[0], 1) };
            out.par_chunks_mut(slab)
                .zip(data.par_chunks(slab))
                .for_each(|(o, d)| {
                    let mut line = vec![0.0; n];
                    for l in 0..count {
                        let start = l * step;
                        filter_line(d, start, stride, radius, taps, &mut line);
                        for (i, v) in line.iter().enumerate() {
                            o[start + i * stride] = *v;
                        }
                    }
                });
        }
        _ => {
            // Filter along z one x-row at a time and scatter afterwards.
            let rows: Vec<Vec<f64>> = (0..dims[1])
                .into_par_iter()
                .map(|y| {
                    let mut line = vec![0.0; n];
                    let mut block = vec![0.0; n * dims[0]];
                    for x in 0..dims[0] {
                        filter_line(data, y * dims[0] + x, slab, radius, taps, &mut line);
                        block[x * n..(x + 1) * n].copy_from_slice(&line);
                    }
                    block
                })
                .collect();
            for (y, block) in rows.iter().enumerate() {
                for x in 0..dims[0] {
                    for z in 0..n {
                        out[z * slab + y * dims[0] + x] = block[x * n + z];
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn filter_line(d: &[f64], start: usize, stride: usize, radius: isize, taps: &[f64], out: &mut [f64]) {
    let n = out.len() as isize;
    for i in 0..n {
        let (mut acc, mut norm) = (0.0, 0.0);
        for k in (i - radius).max(0)..=(i + radius).min(n - 1) {
            let w = taps[(k - i + radius) as usize];
            acc += w * d[start + k as usize * stride];
            norm += w;
        }
        out[i as usize] = acc / norm;
    }
}

/// Gaussian smoothing with a window truncated at `radius` and renormalized
/// where it overhangs the array boundary. Axes of length 1 are left alone.
pub fn gaussian_blur(data: &[f64], dims: [usize; 3], sigma: f64, radius: usize) -> Vec<f64> {
    assert_eq!(data.len(), dims.iter().product::<usize>(), "blur: data/dims mismatch");
    let taps = gaussian_taps(sigma, radius);
    let a = pass(data, dims, 0, &taps);
    let b = pass(&a, dims, 1, &taps);
    pass(&b, dims, 2, &taps)
}
