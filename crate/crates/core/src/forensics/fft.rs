//! Discrete Fourier transforms: iterative radix-2 for power-of-two lengths,
//! direct summation otherwise.

use num_complex::Complex64;

/// In-place forward radix-2 FFT. `data.len()` must be a power of two.
pub fn fft_radix2(data: &mut [Complex64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = -std::f64::consts::TAU / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, step * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = data[start + k];
                let b = data[start + k + half] * twiddles[k];
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

/// Forward DFT by direct summation.
pub fn dft_direct(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    let angle = -std::f64::consts::TAU * ((j * k) % n) as f64 / n as f64;
                    x * Complex64::from_polar(1.0, angle)
                })
                .sum()
        })
        .collect()
}

/// Forward DFT of any length.
pub fn dft(input: &[Complex64]) -> Vec<Complex64> {
    if input.len().is_power_of_two() {
        let mut out = input.to_vec();
        fft_radix2(&mut out);
        out
    } else {
        dft_direct(input)
    }
}

/// Row-major 2-D DFT of a real `h × w` plane.
pub fn dft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in data.chunks_mut(w) {
        let out = dft(row);
        row.copy_from_slice(&out);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        let out = dft(&col);
        for y in 0..h {
            data[y * w + x] = out[y];
        }
    }
    data
}
