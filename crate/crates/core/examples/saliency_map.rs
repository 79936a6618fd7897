//! Self-resemblance saliency and Otsu thresholding on a planted-patch image
//! or on an image given on the command line.
//!
//! cargo run --release --example saliency_map -- [image.ppm] [out.pgm]

use pofsm::image::Image;
use pofsm::saliency::{apply_threshold, otsu_threshold, saliency_map, SaliencyParams};

fn planted() -> Image {
    let mut img = Image::filled(48, 48, 1, 0.3);
    for r in 14..22 {
        for c in 26..34 {
            img.set(r, c, 0, 0.95);
        }
    }
    img
}

fn main() -> pofsm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let img = match args.first() {
        Some(path) => Image::read(path)?,
        None => planted(),
    };
    let map = saliency_map(&img, &SaliencyParams::default())?;
    let t = otsu_threshold(map.values(), 256)?;
    let thresholded = apply_threshold(&map, t.tau);
    let zeros = thresholded.values().iter().filter(|&&v| v == 0.0).count();
    println!("{}x{} image, argmax {:?}, Otsu tau {:.4}", img.rows(), img.cols(), map.argmax(), t.tau);
    println!("{zeros} of {} pixels zeroed", thresholded.values().len());

    let shades = [' ', '.', ':', '+', '#'];
    for r in (0..map.rows()).step_by(2) {
        let line: String = (0..map.cols())
            .map(|c| shades[((thresholded.get(r, c) * 4.0).round() as usize).min(4)])
            .collect();
        println!("|{line}|");
    }
    if let Some(out) = args.get(1) {
        thresholded.write_pgm(out)?;
        println!("wrote {out}");
    }
    Ok(())
}
