//! Builds a 3-D k-space volume from four phantom slices, writes and reads it,
//! then recovers per-slice 2-D k-space with the 1-D inverse transform along
//! the slice-encoding axis and checks the images come back.

use num_complex::{Complex32, Complex64};
use rim_core::harness::{gen_phantom, read_volume, slice_ingest, write_volume, Domain, PhantomKind, Volume};
use rim_core::numcore::fft::fft1_centered;
use rim_core::numcore::{fft2_centered, ifft2_centered};

fn main() -> rim_core::Result<()> {
    let (n, h, w) = (4, 32, 32);
    let slices = (0..n as u64).map(|s| gen_phantom(PhantomKind::Ellipses, h, s)).collect::<Result<Vec<_>, _>>()?;
    let planes = slices.iter().map(fft2_centered).collect::<Result<Vec<_>, _>>()?;
    let mut data = vec![Complex32::new(0.0, 0.0); n * h * w];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for y in 0..h {
        for x in 0..w {
            for (s, l) in line.iter_mut().enumerate() {
                *l = planes[s].get(y, x);
            }
            fft1_centered(&mut line, false);
            for (s, l) in line.iter().enumerate() {
                data[(s * h + y) * w + x] = Complex32::new(l.re as f32, l.im as f32);
            }
        }
    }
    let mut volume = Volume::new([n, h, w], 1, Domain::Kspace, 0, data)?;
    volume.info.modality = "synthetic".into();

    let path = std::env::temp_dir().join("rim_volume_io_example.rimv");
    write_volume(&path, &volume)?;
    let back = read_volume(&path)?;
    println!("read {:?} x {} coil(s), domain {:?}", back.dims, back.coils, back.domain);
    for s in slice_ingest(&back)? {
        let img = ifft2_centered(&s.coils[0])?;
        let err = img
            .data()
            .iter()
            .zip(slices[s.index].data())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        println!("slice {}: max error after round trip {err:.2e}", s.index);
    }
    std::fs::remove_file(&path)?;
    std::fs::remove_file(path.with_extension("rimv.toml")).ok();
    Ok(())
}
