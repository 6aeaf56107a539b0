//! Generate a synthetic cell dataset: render disc images, take Sobel
//! gradients, crop into labeled 15x15 patches, and round-trip the binary
//! dataset format.
//!
//! ```bash
//! cargo run --release -p ccnn --example generate_dataset
//! ```

use ccnn::data::{
    decode_dataset, encode_dataset, generate_cell_image, make_dataset, sobel_gradients,
    CellImageParams, LABEL_THRESHOLD,
};
use ccnn::rng::Rng;

fn main() -> ccnn::Result<()> {
    let params = CellImageParams::default();
    let (image, mask) = generate_cell_image(&params, &mut Rng::seed_from(7));
    let cell_pixels = mask.iter().filter(|&&m| m).count();
    println!(
        "rendered a {}x{} image, {} cell pixels ({:.1}% of the frame)",
        params.image_size,
        params.image_size,
        cell_pixels,
        100.0 * cell_pixels as f64 / mask.len() as f64
    );

    let (ix, iy) = sobel_gradients(&image)?;
    let max_grad = ix
        .data()
        .iter()
        .chain(iy.data())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    println!("Sobel gradient range: +-{max_grad:.2}");

    let dataset = make_dataset(4, &params)?;
    println!(
        "dataset: {} patches, cell fraction {:.3}, components normalized to \
         [{:.0}, {:.0}] from raw [{:.2}, {:.2}]",
        dataset.patches.len(),
        dataset.cell_fraction(),
        0.0,
        1.0,
        dataset.provenance.norm_min,
        dataset.provenance.norm_max,
    );

    // Label counts around the threshold.
    let borderline = dataset
        .patches
        .iter()
        .filter(|p| {
            let c = u32::from(p.cell_pixel_count);
            c + 3 >= LABEL_THRESHOLD && c < LABEL_THRESHOLD + 3
        })
        .count();
    println!("patches within 3 pixels of the {LABEL_THRESHOLD}-pixel label threshold: {borderline}");

    // The binary format round-trips exactly.
    let bytes = encode_dataset(&dataset);
    let decoded = decode_dataset(&bytes)?;
    assert_eq!(decoded, dataset.patches);
    println!("binary round trip: {} bytes, exact", bytes.len());
    Ok(())
}
