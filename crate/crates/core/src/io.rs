//! Loading and saving videos and masks.
//!
//! The canonical interchange format is a PNG frame directory:
//! `frame_%06d.png` files plus a `manifest.json` carrying the frame rate and
//! geometry. Masks live in their own directory as `mask_%06d.png` grayscale
//! images. YUV4MPEG2 (`.y4m`) is supported for 8-bit 4:2:0 and 4:4:4.
//!
//! YCbCr conversion uses BT.601 limited-range integer arithmetic with 8-bit
//! fixed-point coefficients:
//!
//! ```text
//! R = clamp((298*(Y-16)              + 409*(V-128) + 128) >> 8)
//! G = clamp((298*(Y-16) - 100*(U-128) - 208*(V-128) + 128) >> 8)
//! B = clamp((298*(Y-16) + 516*(U-128)              + 128) >> 8)
//! Y = (( 66*R + 129*G +  25*B + 128) >> 8) +  16
//! U = ((-38*R -  74*G + 112*B + 128) >> 8) + 128
//! V = ((112*R -  94*G -  18*B + 128) >> 8) + 128
//! ```
//!
//! 4:2:0 chroma is upsampled by replicating each chroma sample over its 2x2
//! luma block; on write, chroma is the rounded mean of the block.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{BitDepth, ColorSpace, Mask, Video, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoFormat {
    Y4m,
    PngDir,
}

impl VideoFormat {
    /// `.y4m` files are YUV4MPEG2, anything else is treated as a frame directory.
    pub fn infer(path: &Path) -> VideoFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("y4m") => VideoFormat::Y4m,
            _ => VideoFormat::PngDir,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChromaFormat {
    C420,
    C444,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frame_rate: f64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub color_space: ColorSpace,
    #[serde(default)]
    pub bit_depth: BitDepth,
}

pub const MANIFEST: &str = "manifest.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn mask_file_name(index: usize) -> String {
    format!("mask_{index:06}.png")
}

pub fn load_video(path: &Path, format: VideoFormat) -> Result<Video> {
    match format {
        VideoFormat::PngDir => load_png_dir(path),
        VideoFormat::Y4m => load_y4m(path),
    }
}

pub fn save_video(video: &Video, path: &Path, format: VideoFormat) -> Result<()> {
    match format {
        VideoFormat::PngDir => save_png_dir(video, path),
        VideoFormat::Y4m => save_y4m(video, path, ChromaFormat::C444),
    }
}

/// Loads a video, picking the format from the path.
pub fn load_video_auto(path: &Path) -> Result<Video> {
    load_video(path, VideoFormat::infer(path))
}

pub fn save_video_auto(video: &Video, path: &Path) -> Result<()> {
    save_video(video, path, VideoFormat::infer(path))
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        reason: format!("{}: {e}", path.display()),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct DecodedImage {
    width: usize,
    height: usize,
    channels: usize,
    sixteen: bool,
    samples: Vec<u16>,
}

fn decode_png(path: &Path) -> std::result::Result<DecodedImage, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("unexpanded palette image".into()),
    };
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let (width, height) = (info.width as usize, info.height as usize);
    let mut samples = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        let line = &buf[y * info.line_size..(y + 1) * info.line_size];
        if sixteen {
            for pair in line.chunks_exact(2).take(width * channels) {
                samples.push(u16::from_be_bytes([pair[0], pair[1]]));
            }
        } else {
            samples.extend(line[..width * channels].iter().map(|&b| b as u16));
        }
    }
    Ok(DecodedImage {
        width,
        height,
        channels,
        sixteen,
        samples,
    })
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e.to_string()));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(data).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

#[inline]
fn quantize(v: f32, max: f32) -> u16 {
    (v.clamp(0.0, 1.0) * max).round() as u16
}

fn load_png_dir(dir: &Path) -> Result<Video> {
    let manifest = read_manifest(dir)?;
    let mut video = Video::zeros(
        manifest.frames,
        manifest.height,
        manifest.width,
        manifest.frame_rate,
    );
    if manifest.frames == 0 || manifest.width == 0 || manifest.height == 0 {
        return Err(Error::Dimension(format!(
            "{} declares an empty volume",
            dir.display()
        )));
    }
    video.color_space = manifest.color_space;
    video.bit_depth = manifest.bit_depth;
    for t in 0..manifest.frames {
        let path = dir.join(frame_file_name(t));
        let img = decode_png(&path).map_err(|reason| Error::Load { frame: t, reason })?;
        if img.width != manifest.width || img.height != manifest.height {
            return Err(Error::Dimension(format!(
                "frame {t} is {}x{} but manifest declares {}x{}",
                img.width, img.height, manifest.width, manifest.height
            )));
        }
        let max = if img.sixteen { 65535.0 } else { 255.0 };
        let frame = video.frame_mut(t);
        for (px, src) in frame
            .chunks_exact_mut(CHANNELS)
            .zip(img.samples.chunks_exact(img.channels))
        {
            match img.channels {
                1 | 2 => px.fill(src[0] as f32 / max),
                _ => {
                    for c in 0..3 {
                        px[c] = src[c] as f32 / max;
                    }
                }
            }
        }
    }
    Ok(video)
}

fn save_png_dir(video: &Video, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let max = video.bit_depth.max_value();
    for t in 0..video.frames() {
        let frame = video.frame(t);
        let (depth, bytes) = match video.bit_depth {
            BitDepth::Eight => (
                png::BitDepth::Eight,
                frame.iter().map(|&v| quantize(v, max) as u8).collect::<Vec<_>>(),
            ),
            BitDepth::Sixteen => (
                png::BitDepth::Sixteen,
                frame
                    .iter()
                    .flat_map(|&v| quantize(v, max).to_be_bytes())
                    .collect::<Vec<_>>(),
            ),
        };
        encode_png(
            &dir.join(frame_file_name(t)),
            video.width(),
            video.height(),
            png::ColorType::Rgb,
            depth,
            &bytes,
        )?;
    }
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            frame_rate: video.frame_rate,
            width: video.width(),
            height: video.height(),
            frames: video.frames(),
            color_space: video.color_space,
            bit_depth: video.bit_depth,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskManifest {
    width: usize,
    height: usize,
    frames: usize,
}

/// Loads a mask directory. Samples are thresholded at 128 (8-bit scale);
/// anything other than pure black/white is accepted with a warning.
pub fn load_mask(dir: &Path) -> Result<Mask> {
    let manifest_path = dir.join(MANIFEST);
    let declared: Option<MaskManifest> = match fs::read_to_string(&manifest_path) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: format!("{}: {e}", manifest_path.display()),
        })?),
        Err(_) => None,
    };
    let frames = match &declared {
        Some(m) => m.frames,
        None => (0..)
            .take_while(|&t| dir.join(mask_file_name(t)).exists())
            .count(),
    };
    if frames == 0 {
        return Err(Error::Load {
            frame: 0,
            reason: format!("no mask frames in {}", dir.display()),
        });
    }
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut non_binary = 0usize;
    for t in 0..frames {
        let path = dir.join(mask_file_name(t));
        let img = decode_png(&path).map_err(|reason| Error::Load { frame: t, reason })?;
        match dims {
            None => dims = Some((img.width, img.height)),
            Some(d) if d != (img.width, img.height) => {
                return Err(Error::Dimension(format!(
                    "mask frame {t} is {}x{}, expected {}x{}",
                    img.width, img.height, d.0, d.1
                )))
            }
            _ => {}
        }
        let (lo, hi, threshold) = if img.sixteen {
            (0u16, 65535u16, 128u16 * 257)
        } else {
            (0, 255, 128)
        };
        for px in img.samples.chunks_exact(img.channels) {
            let v = px[0];
            if v != lo && v != hi {
                non_binary += 1;
            }
            data.push(v >= threshold);
        }
    }
    if non_binary > 0 {
        log::warn!(
            "{}: {non_binary} mask samples were not pure 0/255 and were thresholded",
            dir.display()
        );
    }
    let (w, h) = dims.expect("at least one frame");
    if let Some(m) = declared {
        if (m.width, m.height) != (w, h) {
            return Err(Error::Dimension(format!(
                "mask manifest declares {}x{}, frames are {w}x{h}",
                m.width, m.height
            )));
        }
    }
    Mask::from_data(frames, h, w, data)
}

/// Loads a mask and checks it against the paired video geometry.
pub fn load_mask_for(dir: &Path, video: &Video) -> Result<Mask> {
    let mask = load_mask(dir)?;
    crate::video::check_same_dims(video, &mask)?;
    Ok(mask)
}

pub fn save_mask(mask: &Mask, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for t in 0..mask.frames() {
        let bytes: Vec<u8> = mask.frame(t).iter().map(|&m| if m { 255 } else { 0 }).collect();
        encode_png(
            &dir.join(mask_file_name(t)),
            mask.width(),
            mask.height(),
            png::ColorType::Grayscale,
            png::BitDepth::Eight,
            &bytes,
        )?;
    }
    write_json(
        &dir.join(MANIFEST),
        &MaskManifest {
            width: mask.width(),
            height: mask.height(),
            frames: mask.frames(),
        },
    )
}

#[inline]
fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

/// Fixed-point BT.601 limited-range YCbCr to RGB.
#[inline]
pub fn ycbcr_to_rgb(y: u8, u: u8, v: u8) -> [u8; 3] {
    let c = y as i32 - 16;
    let d = u as i32 - 128;
    let e = v as i32 - 128;
    [
        clamp_u8((298 * c + 409 * e + 128) >> 8),
        clamp_u8((298 * c - 100 * d - 208 * e + 128) >> 8),
        clamp_u8((298 * c + 516 * d + 128) >> 8),
    ]
}

/// Fixed-point BT.601 limited-range RGB to YCbCr.
#[inline]
pub fn rgb_to_ycbcr(rgb: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (rgb[0] as i32, rgb[1] as i32, rgb[2] as i32);
    [
        clamp_u8(((66 * r + 129 * g + 25 * b + 128) >> 8) + 16),
        clamp_u8(((-38 * r - 74 * g + 112 * b + 128) >> 8) + 128),
        clamp_u8(((112 * r - 94 * g - 18 * b + 128) >> 8) + 128),
    ]
}

fn y4m_err(path: &Path, frame: usize, e: y4m::Error) -> Error {
    match e {
        y4m::Error::IoError(io) => Error::io(path, io),
        other => Error::Load {
            frame,
            reason: format!("{}: {other:?}", path.display()),
        },
    }
}

/// Decodes a YUV4MPEG2 stream (8-bit 4:2:0 or 4:4:4) to 4:4:4 RGB.
pub fn read_y4m(reader: impl Read, source: &Path) -> Result<Video> {
    let mut dec = y4m::decode(reader).map_err(|e| y4m_err(source, 0, e))?;
    let (w, h) = (dec.get_width(), dec.get_height());
    let chroma = match dec.get_colorspace() {
        y4m::Colorspace::C420
        | y4m::Colorspace::C420jpeg
        | y4m::Colorspace::C420paldv
        | y4m::Colorspace::C420mpeg2 => ChromaFormat::C420,
        y4m::Colorspace::C444 => ChromaFormat::C444,
        other => {
            return Err(Error::Load {
                frame: 0,
                reason: format!("unsupported y4m colorspace {other:?}"),
            })
        }
    };
    let rate = dec.get_framerate();
    let frame_rate = if rate.den == 0 {
        0.0
    } else {
        rate.num as f64 / rate.den as f64
    };
    let cw = match chroma {
        ChromaFormat::C420 => w.div_ceil(2),
        ChromaFormat::C444 => w,
    };
    let mut data = Vec::new();
    let mut frames = 0usize;
    loop {
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(y4m_err(source, frames, e)),
        };
        let (yp, up, vp) = (frame.get_y_plane(), frame.get_u_plane(), frame.get_v_plane());
        for y in 0..h {
            for x in 0..w {
                let ci = match chroma {
                    ChromaFormat::C420 => (y / 2) * cw + x / 2,
                    ChromaFormat::C444 => y * cw + x,
                };
                let rgb = ycbcr_to_rgb(yp[y * w + x], up[ci], vp[ci]);
                data.extend(rgb.iter().map(|&c| c as f32 / 255.0));
            }
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Load {
            frame: 0,
            reason: format!("{} contains no frames", source.display()),
        });
    }
    Video::from_data(frames, h, w, frame_rate, data)
}

pub fn load_y4m(path: &Path) -> Result<Video> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_y4m(BufReader::new(file), path)
}

fn frame_rate_ratio(rate: f64) -> y4m::Ratio {
    let num = (rate * 1000.0).round().max(1.0) as usize;
    let (mut a, mut b) = (num, 1000usize);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    y4m::Ratio::new(num / a, 1000 / a)
}

pub fn write_y4m(video: &Video, writer: impl Write, chroma: ChromaFormat, dest: &Path) -> Result<()> {
    let (w, h) = (video.width(), video.height());
    let colorspace = match chroma {
        ChromaFormat::C420 => y4m::Colorspace::C420jpeg,
        ChromaFormat::C444 => y4m::Colorspace::C444,
    };
    let mut enc = y4m::encode(w, h, frame_rate_ratio(video.frame_rate))
        .with_colorspace(colorspace)
        .write_header(writer)
        .map_err(|e| y4m_err(dest, 0, e))?;
    let (cw, ch) = match chroma {
        ChromaFormat::C420 => (w.div_ceil(2), h.div_ceil(2)),
        ChromaFormat::C444 => (w, h),
    };
    for t in 0..video.frames() {
        let mut yp = vec![0u8; w * h];
        let mut usum = vec![0u32; cw * ch];
        let mut vsum = vec![0u32; cw * ch];
        let mut count = vec![0u32; cw * ch];
        for y in 0..h {
            for x in 0..w {
                let p = video.pixel(t, y, x);
                let rgb = [
                    quantize(p[0], 255.0) as u8,
                    quantize(p[1], 255.0) as u8,
                    quantize(p[2], 255.0) as u8,
                ];
                let [yy, u, v] = rgb_to_ycbcr(rgb);
                yp[y * w + x] = yy;
                let ci = match chroma {
                    ChromaFormat::C420 => (y / 2) * cw + x / 2,
                    ChromaFormat::C444 => y * cw + x,
                };
                usum[ci] += u as u32;
                vsum[ci] += v as u32;
                count[ci] += 1;
            }
        }
        let avg = |s: &[u32]| -> Vec<u8> {
            s.iter()
                .zip(&count)
                .map(|(&s, &n)| ((s + n / 2) / n) as u8)
                .collect()
        };
        let (up, vp) = (avg(&usum), avg(&vsum));
        enc.write_frame(&y4m::Frame::new([&yp, &up, &vp], None))
            .map_err(|e| y4m_err(dest, t, e))?;
    }
    Ok(())
}

pub fn save_y4m(video: &Video, path: &Path, chroma: ChromaFormat) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_y4m(video, &mut w, chroma, path)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes any serializable value as pretty JSON, creating parent directories.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(path, value)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        reason: format!("{}: {e}", path.display()),
    })
}

/// Writes a single RGB image (used for report strips).
pub fn save_png_rgb(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let bytes: Vec<u8> = rgb.iter().map(|&v| quantize(v, 255.0) as u8).collect();
    encode_png(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey_png(dir: &Path, name: &str, w: usize, h: usize, values: &[u8]) {
        fs::create_dir_all(dir).unwrap();
        encode_png(
            &dir.join(name),
            w,
            h,
            png::ColorType::Grayscale,
            png::BitDepth::Eight,
            values,
        )
        .unwrap();
    }

    #[test]
    fn white_png_dir_loads_as_ones() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("v");
        for t in 0..3 {
            grey_png(&dir, &frame_file_name(t), 4, 4, &[255; 16]);
        }
        write_json(
            &dir.join(MANIFEST),
            &Manifest {
                frame_rate: 24.0,
                width: 4,
                height: 4,
                frames: 3,
                color_space: ColorSpace::Srgb,
                bit_depth: BitDepth::Eight,
            },
        )
        .unwrap();
        let v = load_video(&dir, VideoFormat::PngDir).unwrap();
        assert_eq!(v.dims(), (3, 4, 4));
        assert!(v.data().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn missing_frame_names_index() {
        let tmp = tempfile::tempdir().unwrap();
        let v = Video::filled(3, 2, 2, 10.0, 0.5);
        save_png_dir(&v, tmp.path()).unwrap();
        fs::remove_file(tmp.path().join(frame_file_name(1))).unwrap();
        match load_png_dir(tmp.path()) {
            Err(Error::Load { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_frame_size_is_dimension_error() {
        let tmp = tempfile::tempdir().unwrap();
        let v = Video::filled(2, 2, 2, 10.0, 0.5);
        save_png_dir(&v, tmp.path()).unwrap();
        grey_png(tmp.path(), &frame_file_name(1), 3, 2, &[0; 6]);
        assert!(matches!(load_png_dir(tmp.path()), Err(Error::Dimension(_))));
    }

    #[test]
    fn manifest_records_frame_rate_and_count() {
        let tmp = tempfile::tempdir().unwrap();
        let v = Video::zeros(88, 128, 512, 15.0);
        save_video(&v, tmp.path(), VideoFormat::PngDir).unwrap();
        let m = read_manifest(tmp.path()).unwrap();
        assert_eq!(m.frame_rate, 15.0);
        assert_eq!(m.frames, 88);
        let pngs = fs::read_dir(tmp.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .ends_with(".png")
            })
            .count();
        assert_eq!(pngs, 88);
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut v = Video::from_fn(2, 3, 5, 30.0, |t, y, x| {
            let q = ((t * 7919 + y * 104729 + x * 1299709) % 65536) as f32;
            [q / 65535.0, (65535.0 - q) / 65535.0, 0.5]
        });
        v.bit_depth = BitDepth::Sixteen;
        // snap the 0.5 channel to the 16-bit lattice
        for s in v.data_mut() {
            *s = (*s * 65535.0).round() / 65535.0;
        }
        save_png_dir(&v, tmp.path()).unwrap();
        assert_eq!(load_png_dir(tmp.path()).unwrap(), v);
    }

    #[test]
    fn mask_threshold_boundary() {
        let tmp = tempfile::tempdir().unwrap();
        grey_png(tmp.path(), &mask_file_name(0), 3, 1, &[127, 128, 255]);
        let m = load_mask(tmp.path()).unwrap();
        assert_eq!(m.frame(0), &[false, true, true]);
    }

    #[test]
    fn all_white_mask_is_all_valid() {
        let tmp = tempfile::tempdir().unwrap();
        grey_png(tmp.path(), &mask_file_name(0), 4, 4, &[255; 16]);
        grey_png(tmp.path(), &mask_file_name(1), 4, 4, &[255; 16]);
        let m = load_mask(tmp.path()).unwrap();
        assert_eq!(m.count(), 32);
    }

    #[test]
    fn mask_dims_must_match_video() {
        let tmp = tempfile::tempdir().unwrap();
        save_mask(&Mask::new(2, 4, 4, true), tmp.path()).unwrap();
        let v = Video::zeros(2, 4, 5, 1.0);
        assert!(matches!(load_mask_for(tmp.path(), &v), Err(Error::Dimension(_))));
    }

    #[test]
    fn y4m_header_rate_and_444_round_trip_is_close() {
        let v = Video::from_fn(2, 4, 6, 15.0, |t, y, x| {
            [(x as f32) / 6.0, (y as f32) / 4.0, t as f32 * 0.5]
        });
        let mut buf = Vec::new();
        write_y4m(&v, &mut buf, ChromaFormat::C444, Path::new("mem")).unwrap();
        assert!(buf.starts_with(b"YUV4MPEG2 W6 H4 F15:1"));
        let back = read_y4m(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.frame_rate, 15.0);
        let worst = back
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 3.0 / 255.0, "worst error {worst}");
    }
}
