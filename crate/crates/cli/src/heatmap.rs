use std::io::Cursor;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageFormat, Rgb, RgbImage};
use particul::io::{read_bank, read_feature_file, write_atomic};
use particul::{FeatureMap, Map2};
use serde::Serialize;

use crate::args::VisualizeCmd;
use crate::commands::emit;
use crate::error::{CliError, CliResult};

const OVERLAY_ALPHA: f64 = 0.5;

/// Bilinear resize with half-pixel centers; samples outside the source
/// grid clamp to the border cells.
pub fn upsample_bilinear(map: &Map2<f64>, height: u32, width: u32) -> Vec<f64> {
    let (h, w) = (map.height(), map.width());
    let coord = |dst: u32, dst_len: u32, src_len: usize| -> (usize, usize, f64) {
        let x = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(height as usize * width as usize);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, h);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, w);
            let top = map.get(y0, x0) * (1.0 - fx) + map.get(y0, x1) * fx;
            let bottom = map.get(y1, x0) * (1.0 - fx) + map.get(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Black through red and yellow to white.
pub fn hot(t: f64) -> Rgb<u8> {
    let channel = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([channel(3.0 * t), channel(3.0 * t - 1.0), channel(3.0 * t - 2.0)])
}

pub fn render(values: &[f64], height: u32, width: u32, scale_max: f64) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let v = values[(y * width + x) as usize];
        hot(if scale_max > 0.0 { v / scale_max } else { 0.0 })
    })
}

fn blend(base: &RgbImage, heat: &RgbImage) -> RgbImage {
    RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let (b, h) = (base.get_pixel(x, y), heat.get_pixel(x, y));
        Rgb(std::array::from_fn(|c| {
            ((1.0 - OVERLAY_ALPHA) * b[c] as f64 + OVERLAY_ALPHA * h[c] as f64).round() as u8
        }))
    })
}

fn write_png(path: &Path, img: &RgbImage) -> CliResult<()> {
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png)?;
    Ok(write_atomic(path, bytes.get_ref())?)
}

#[derive(Serialize)]
struct DetectorHeatmap {
    detector: usize,
    heatmap: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    overlay: Option<String>,
    /// Activation value mapped to the top of the color scale.
    scale_max: f64,
    peak: (usize, usize),
}

#[derive(Serialize)]
struct Metadata {
    colormap: &'static str,
    color_scale: &'static str,
    overlay_alpha: Option<f64>,
    upsampling: &'static str,
    source_grid: (usize, usize),
    height: u32,
    width: u32,
    detectors: Vec<DetectorHeatmap>,
}

pub fn visualize(cmd: &VisualizeCmd) -> CliResult<()> {
    if cmd.height == 0 || cmd.width == 0 {
        return Err(CliError::Usage("--height and --width must be positive".into()));
    }
    let (bank, _) = read_bank::<f64>(&cmd.bank)?;
    let features: FeatureMap<f64> = read_feature_file(&cmd.features)?;
    let base = match &cmd.image {
        Some(path) => {
            let img = image::open(path)?.to_rgb8();
            Some(imageops::resize(&img, cmd.width, cmd.height, FilterType::Triangle))
        }
        None => None,
    };
    let fr = bank.forward(&features)?;

    std::fs::create_dir_all(&cmd.out).map_err(CliError::io(cmd.out.display().to_string()))?;
    let mut detectors = Vec::with_capacity(fr.parts());
    for (i, map) in fr.activation_maps.iter().enumerate() {
        let values = upsample_bilinear(map, cmd.height, cmd.width);
        let scale_max = map.max();
        let heat = render(&values, cmd.height, cmd.width, scale_max);
        let name = format!("detector_{i}.png");
        write_png(&cmd.out.join(&name), &heat)?;
        let overlay = match &base {
            Some(b) => {
                let name = format!("overlay_{i}.png");
                write_png(&cmd.out.join(&name), &blend(b, &heat))?;
                Some(name)
            }
            None => None,
        };
        detectors.push(DetectorHeatmap {
            detector: i,
            heatmap: name,
            overlay,
            scale_max,
            peak: fr.max_locations[i],
        });
    }
    let meta = Metadata {
        colormap: "hot: r = clamp(3t), g = clamp(3t - 1), b = clamp(3t - 2)",
        color_scale: "t = activation / scale_max per detector, so 0 is black and the detector's peak activation is white",
        overlay_alpha: base.as_ref().map(|_| OVERLAY_ALPHA),
        upsampling: "bilinear, half-pixel centers, clamped at borders",
        source_grid: (features.height(), features.width()),
        height: cmd.height,
        width: cmd.width,
        detectors,
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write_atomic(&cmd.out.join("heatmaps.json"), &json)?;
    eprintln!("wrote {} heatmaps to {}", fr.parts(), cmd.out.display());
    emit(&serde_json::json!({ "metadata": cmd.out.join("heatmaps.json") }))
}
