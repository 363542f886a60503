use regfactor::image::Image;

/// Direct SSIM: for every fully-inside 11×11 window, weighted moments with
/// an explicitly evaluated 2-D Gaussian normalized over the window.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let c = 5.0;
    let mut wts = vec![0.0; k * k];
    for j in 0..k {
        for i in 0..k {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            wts[j * k + i] = (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|w| *w /= total);
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let mut acc = 0.0;
    let mut n = 0;
    for y0 in 0..=a.height - k {
        for x0 in 0..=a.width - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    let w = wts[j * k + i];
                    ma += w * a.get(x0 + i, y0 + j);
                    mb += w * b.get(x0 + i, y0 + j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    let w = wts[j * k + i];
                    let (da, db) = (a.get(x0 + i, y0 + j) - ma, b.get(x0 + i, y0 + j) - mb);
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    acc / n as f64
}
