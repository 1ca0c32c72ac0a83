use std::path::Path;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, offset, "file ends inside the header"))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(format_err(
            path,
            0,
            format!("magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn check_length(bytes: &[u8], header: usize, body: usize, path: &Path) -> Result<()> {
    let expected = header + body;
    if bytes.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an IDX image file and its label file. Pixels are scaled to [0, 1];
/// the class count is one past the largest label.
pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<LabeledSet> {
    let img = read(image_path)?;
    check_magic(&img, IMAGE_MAGIC, image_path)?;
    let count = be_u32(&img, 4, image_path)? as usize;
    let rows = be_u32(&img, 8, image_path)? as usize;
    let cols = be_u32(&img, 12, image_path)? as usize;
    check_length(&img, 16, count * rows * cols, image_path)?;

    let lab = read(label_path)?;
    check_magic(&lab, LABEL_MAGIC, label_path)?;
    let label_count = be_u32(&lab, 4, label_path)? as usize;
    check_length(&lab, 8, label_count, label_path)?;
    if label_count != count {
        return Err(format_err(
            label_path,
            4,
            format!("{label_count} labels for {count} images in {}", image_path.display()),
        ));
    }

    let pixels: Vec<f64> = img[16..16 + count * rows * cols]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = lab[8..8 + count].iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let images = Tensor::new(vec![count, 1, rows, cols], pixels)?;
    LabeledSet::new(
        images,
        labels,
        num_classes,
        format!("{} (pixels / 255)", image_path.display()),
    )
}

/// Serializes 8-bit images in IDX layout.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, img: &[u8], lab: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images");
        let lp = dir.join("labels");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn two_images_by_hand() {
        let dir = tempfile::tempdir().unwrap();
        // header bytes written out per the IDX layout
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        let mut pixels = vec![0u8; 2 * 784];
        pixels[0] = 255;
        pixels[784 + 783] = 51;
        img.extend_from_slice(&pixels);
        let lab = [0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        let (ip, lp) = write_pair(dir.path(), &img, &lab);
        let set = load_idx(&ip, &lp).unwrap();
        assert_eq!(set.images.shape(), &[2, 1, 28, 28]);
        assert_eq!(set.labels, vec![7, 3]);
        assert_eq!(set.images.data()[0], 1.0);
        assert!((set.images.data()[2 * 784 - 1] - 0.2).abs() < 1e-15);
        assert!(set.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_eq!(encode_idx_images(2, 28, 28, &pixels), img);
        assert_eq!(encode_idx_labels(&[7, 3]), lab);
    }

    #[test]
    fn wrong_label_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img = encode_idx_images(1, 2, 2, &[0; 4]);
        let mut lab = encode_idx_labels(&[1]);
        lab[3] = 3;
        let (ip, lp) = write_pair(dir.path(), &img, &lab);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = encode_idx_images(2, 2, 2, &[0; 8]);
        img.truncate(20);
        let (ip, lp) = write_pair(dir.path(), &img, &encode_idx_labels(&[0, 1]));
        let msg = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(msg.contains("expected 24 bytes, found 20"), "{msg}");
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(
            dir.path(),
            &encode_idx_images(2, 1, 1, &[0, 0]),
            &encode_idx_labels(&[0]),
        );
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_idx(Path::new("/nonexistent/a"), Path::new("/nonexistent/b")),
            Err(Error::Io { .. })
        ));
    }
}
