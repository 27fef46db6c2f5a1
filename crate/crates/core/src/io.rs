//! Prior-bundle and checkpoint serialization.
//!
//! Bundle directory layout (little-endian throughout):
//!   cameras.json                  array of {t, K: 9 row-major, E: 16 row-major, width, height}
//!   frame_%05d.image.png          8-bit RGB
//!   frame_%05d.mask.pgm           binary PGM, 255 = human
//!   frame_%05d.depth_com.f32      raw f32 row-major, sidecar frame_%05d.depth_com.json
//!   frame_%05d.depth_hum.f32      same, valid only inside the mask
//!   keypoints.json                array of keypoint tracks
//!   sparse_points.json            per-frame arrays of world points
//!
//! Checkpoints are one blob: u64 header length, JSON header with counts and
//! shapes, then packed f64 parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{DeformNetParams, NetShape};
use crate::scene::{
    depth_valid, Camera, FramePriors, Gaussian, GaussianFrameSet, Image, KeypointTrack, Mask,
    PriorBundle, Raster, DEPTH_INVALID,
};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |e| Error::MalformedHeader {
        path: path.to_path_buf(),
        field: "json".into(),
        msg: e.to_string(),
    }
}

pub fn frame_file(dir: &Path, index: usize, suffix: &str) -> PathBuf {
    dir.join(format!("frame_{index:05}.{suffix}"))
}

// ---------------------------------------------------------------------------
// cameras.json

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    t: f64,
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "E")]
    e: [f64; 16],
    width: usize,
    height: usize,
}

fn matrix3_rows(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

fn matrix4_rows(m: &Matrix4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// PNG images

pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Rgb([q(p[0]), q(p[1]), q(p[2])]));
        }
    }
    buf.save(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

pub fn load_png(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let buf = image::open(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })?
        .to_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut img = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = buf.get_pixel(x as u32, y as u32);
            img.set_pixel(x, y, [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ]);
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// binary PGM masks

pub fn save_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    bytes.extend(mask.data.iter().map(|&m| if m { 255u8 } else { 0u8 }));
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_mask_pgm(path: &Path) -> Result<Mask> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |field: &str, msg: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        field: field.into(),
        msg: msg.into(),
    };
    // header: magic, width, height, maxval as whitespace-separated tokens,
    // '#' comments allowed, then a single whitespace byte before the payload
    let mut pos = 0usize;
    let mut token = |field: &str| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(field, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token("magic")? != "P5" {
        return Err(bad("magic", "expected P5"));
    }
    let width: usize = token("width")?.parse().map_err(|_| bad("width", "not an integer"))?;
    let height: usize = token("height")?.parse().map_err(|_| bad("height", "not an integer"))?;
    let maxval: usize = token("maxval")?.parse().map_err(|_| bad("maxval", "not an integer"))?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval", "expected 1..=255"));
    }
    pos += 1; // the single whitespace after maxval
    let payload = &bytes[pos.min(bytes.len())..];
    if payload.len() != width * height {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            field: "pixel data".into(),
            expected: (width * height).to_string(),
            actual: payload.len().to_string(),
        });
    }
    Ok(Mask {
        width,
        height,
        data: payload.iter().map(|&b| b as usize * 2 > maxval).collect(),
    })
}

// ---------------------------------------------------------------------------
// raw f32 rasters with JSON sidecar

#[derive(Serialize, Deserialize)]
struct RasterSidecar {
    width: usize,
    height: usize,
}

/// Sidecar path: same stem with the trailing extension replaced by json.
fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_raster_f32(path: &Path, raster: &Raster) -> Result<()> {
    let mut bytes = Vec::with_capacity(raster.data.len() * 4);
    for &v in &raster.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    let sc = sidecar_path(path);
    let json = serde_json::to_string(&RasterSidecar { width: raster.width, height: raster.height })
        .expect("sidecar serializes");
    fs::write(&sc, json).map_err(io_err(&sc))
}

pub fn load_raster_f32(path: &Path) -> Result<Raster> {
    let sc = sidecar_path(path);
    for p in [path, sc.as_path()] {
        if !p.exists() {
            return Err(Error::MissingFile { path: p.to_path_buf() });
        }
    }
    let sidecar: RasterSidecar =
        serde_json::from_slice(&fs::read(&sc).map_err(io_err(&sc))?).map_err(json_err(&sc))?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected = sidecar.width * sidecar.height * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            field: "raster bytes".into(),
            expected: expected.to_string(),
            actual: bytes.len().to_string(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Raster { width: sidecar.width, height: sidecar.height, data })
}

// ---------------------------------------------------------------------------
// bundle

pub fn save_bundle(dir: &Path, bundle: &PriorBundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let records: Vec<CameraRecord> = bundle
        .frames
        .iter()
        .map(|f| CameraRecord {
            t: f.t,
            k: matrix3_rows(&f.camera.k),
            e: matrix4_rows(&f.camera.e),
            width: f.camera.width,
            height: f.camera.height,
        })
        .collect();
    let cam_path = dir.join("cameras.json");
    fs::write(&cam_path, serde_json::to_vec_pretty(&records).expect("cameras serialize"))
        .map_err(io_err(&cam_path))?;

    for (i, f) in bundle.frames.iter().enumerate() {
        save_png(&frame_file(dir, i, "image.png"), &f.image)?;
        save_mask_pgm(&frame_file(dir, i, "mask.pgm"), &f.mask)?;
        save_raster_f32(&frame_file(dir, i, "depth_com.f32"), &f.depth_com)?;
        save_raster_f32(&frame_file(dir, i, "depth_hum.f32"), &f.depth_hum)?;
    }

    let kp_path = dir.join("keypoints.json");
    fs::write(&kp_path, serde_json::to_vec(&bundle.tracks).expect("tracks serialize"))
        .map_err(io_err(&kp_path))?;

    let sparse: Vec<Vec<[f64; 3]>> = bundle
        .frames
        .iter()
        .map(|f| f.sparse_points.iter().map(|p| [p[0], p[1], p[2]]).collect())
        .collect();
    let sp_path = dir.join("sparse_points.json");
    fs::write(&sp_path, serde_json::to_vec(&sparse).expect("points serialize"))
        .map_err(io_err(&sp_path))
}

pub fn load_bundle(dir: &Path) -> Result<PriorBundle> {
    let cam_path = dir.join("cameras.json");
    if !cam_path.exists() {
        return Err(Error::MissingFile { path: cam_path });
    }
    let records: Vec<CameraRecord> =
        serde_json::from_slice(&fs::read(&cam_path).map_err(io_err(&cam_path))?)
            .map_err(json_err(&cam_path))?;
    if records.is_empty() {
        return Err(Error::MalformedHeader {
            path: cam_path,
            field: "frames".into(),
            msg: "bundle has no frames".into(),
        });
    }

    let sp_path = dir.join("sparse_points.json");
    if !sp_path.exists() {
        return Err(Error::MissingFile { path: sp_path });
    }
    let sparse: Vec<Vec<[f64; 3]>> =
        serde_json::from_slice(&fs::read(&sp_path).map_err(io_err(&sp_path))?)
            .map_err(json_err(&sp_path))?;
    if sparse.len() != records.len() {
        return Err(Error::DimensionMismatch {
            path: sp_path,
            field: "per-frame point arrays".into(),
            expected: records.len().to_string(),
            actual: sparse.len().to_string(),
        });
    }

    let mut frames = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let camera = Camera::new(
            Matrix3::from_row_slice(&rec.k),
            Matrix4::from_row_slice(&rec.e),
            rec.width,
            rec.height,
        );
        camera.validate()?;
        let image = load_png(&frame_file(dir, i, "image.png"))?;
        let mask = load_mask_pgm(&frame_file(dir, i, "mask.pgm"))?;
        let depth_com = load_raster_f32(&frame_file(dir, i, "depth_com.f32"))?;
        let mut depth_hum = load_raster_f32(&frame_file(dir, i, "depth_hum.f32"))?;
        for (name, w, h, p) in [
            ("image", image.width, image.height, frame_file(dir, i, "image.png")),
            ("mask", mask.width, mask.height, frame_file(dir, i, "mask.pgm")),
            ("depth_com", depth_com.width, depth_com.height, frame_file(dir, i, "depth_com.f32")),
            ("depth_hum", depth_hum.width, depth_hum.height, frame_file(dir, i, "depth_hum.f32")),
        ] {
            if w != rec.width || h != rec.height {
                return Err(Error::DimensionMismatch {
                    path: p,
                    field: name.into(),
                    expected: format!("{}x{}", rec.width, rec.height),
                    actual: format!("{w}x{h}"),
                });
            }
        }
        // human depth is only defined on the mask
        for y in 0..mask.height {
            for x in 0..mask.width {
                if !mask.get(x, y) && depth_valid(depth_hum.get(x, y)) {
                    depth_hum.set(x, y, DEPTH_INVALID);
                }
            }
        }
        frames.push(FramePriors {
            t: rec.t,
            camera,
            image,
            mask,
            depth_com,
            depth_hum,
            sparse_points: sparse[i].iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
        });
    }

    let kp_path = dir.join("keypoints.json");
    if !kp_path.exists() {
        return Err(Error::MissingFile { path: kp_path });
    }
    let tracks: Vec<KeypointTrack> =
        serde_json::from_slice(&fs::read(&kp_path).map_err(io_err(&kp_path))?)
            .map_err(json_err(&kp_path))?;
    for trk in &tracks {
        if trk.obs.len() != frames.len() {
            return Err(Error::DimensionMismatch {
                path: kp_path,
                field: format!("track {} observations", trk.kp_id),
                expected: frames.len().to_string(),
                actual: trk.obs.len().to_string(),
            });
        }
    }

    let bundle = PriorBundle { frames, tracks };
    for f in &bundle.frames {
        f.check_invariants()?;
    }
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// checkpoints

pub const GAUSSIAN_FLOATS: usize = 14; // mu 3, rot 4, scale 3, opacity 1, color 3

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub frame_set: GaussianFrameSet,
    pub net: DeformNetParams,
    pub iteration: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    iteration: u64,
    ref_times: Vec<f64>,
    ref_frame_indices: Vec<usize>,
    num_human: usize,
    num_background: usize,
    human_lineage_ids: Vec<u64>,
    background_lineage_ids: Vec<u64>,
    lineage: Vec<(u64, u64)>,
    next_lineage_id: u64,
    net_shape: NetShape,
    net_len: usize,
}

fn push_gaussian(out: &mut Vec<f64>, g: &Gaussian) {
    out.extend_from_slice(&[g.mu[0], g.mu[1], g.mu[2]]);
    out.extend_from_slice(&g.rot);
    out.extend_from_slice(&[g.scale[0], g.scale[1], g.scale[2]]);
    out.push(g.opacity);
    out.extend_from_slice(&g.color);
}

fn read_gaussian(data: &[f64], lineage_id: u64) -> Gaussian {
    Gaussian {
        mu: Vector3::new(data[0], data[1], data[2]),
        rot: [data[3], data[4], data[5], data[6]],
        scale: Vector3::new(data[7], data[8], data[9]),
        opacity: data[10],
        color: [data[11], data[12], data[13]],
        lineage_id,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let fs_ = &ckpt.frame_set;
    fs_.check_sync()?;
    let header = CheckpointHeader {
        format_version: 1,
        iteration: ckpt.iteration,
        ref_times: fs_.ref_times.clone(),
        ref_frame_indices: fs_.ref_frame_indices.clone(),
        num_human: fs_.num_human(),
        num_background: fs_.background.len(),
        human_lineage_ids: fs_.frames.first().map_or(Vec::new(), |f| {
            f.iter().map(|g| g.lineage_id).collect()
        }),
        background_lineage_ids: fs_.background.iter().map(|g| g.lineage_id).collect(),
        lineage: fs_.lineage.iter().map(|(&k, &v)| (k, v)).collect(),
        next_lineage_id: fs_.next_lineage_id,
        net_shape: ckpt.net.shape,
        net_len: ckpt.net.num_params(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut floats: Vec<f64> = Vec::new();
    for frame in &fs_.frames {
        for g in frame {
            push_gaussian(&mut floats, g);
        }
    }
    for g in &fs_.background {
        push_gaussian(&mut floats, g);
    }
    floats.extend_from_slice(ckpt.net.flat());

    let mut blob = Vec::with_capacity(8 + header_json.len() + floats.len() * 8);
    blob.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    blob.extend_from_slice(&header_json);
    for v in &floats {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, blob).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |field: &str, msg: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        field: field.into(),
        msg,
    };
    if bytes.len() < 8 {
        return Err(bad("length prefix", "file shorter than 8 bytes".into()));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    if 8 + header_len > bytes.len() {
        return Err(bad("length prefix", format!("header length {header_len} exceeds file")));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[8..8 + header_len]).map_err(json_err(path))?;
    if header.format_version != 1 {
        return Err(bad("format_version", format!("unsupported version {}", header.format_version)));
    }
    let b = header.ref_times.len();
    if header.ref_frame_indices.len() != b || header.human_lineage_ids.len() != header.num_human {
        return Err(bad("counts", "header count fields disagree".into()));
    }

    let payload = &bytes[8 + header_len..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload", "float payload not a multiple of 8 bytes".into()));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected = (b * header.num_human + header.num_background) * GAUSSIAN_FLOATS
        + header.net_len;
    if floats.len() != expected {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            field: "float payload".into(),
            expected: expected.to_string(),
            actual: floats.len().to_string(),
        });
    }

    let mut off = 0;
    let mut frames = Vec::with_capacity(b);
    for _ in 0..b {
        let mut frame = Vec::with_capacity(header.num_human);
        for id in &header.human_lineage_ids {
            frame.push(read_gaussian(&floats[off..off + GAUSSIAN_FLOATS], *id));
            off += GAUSSIAN_FLOATS;
        }
        frames.push(frame);
    }
    let mut background = Vec::with_capacity(header.num_background);
    for id in &header.background_lineage_ids {
        background.push(read_gaussian(&floats[off..off + GAUSSIAN_FLOATS], *id));
        off += GAUSSIAN_FLOATS;
    }
    let net = DeformNetParams::from_flat(header.net_shape, floats[off..].to_vec())?;

    let frame_set = GaussianFrameSet {
        ref_times: header.ref_times,
        ref_frame_indices: header.ref_frame_indices,
        frames,
        background,
        lineage: header.lineage.into_iter().collect::<BTreeMap<u64, u64>>(),
        next_lineage_id: header.next_lineage_id,
    };
    frame_set.check_invariants()?;
    Ok(Checkpoint { frame_set, net, iteration: header.iteration })
}
