//! Dataset loading: MNIST-style IDX pairs and CIFAR-10 binary batches, both
//! normalized to [0,1] by dividing raw bytes by 255 (no other preprocessing).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use std::fs;
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 32 * 32 * 3;

/// Images in [0,1] with integer class labels.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub images: Tensor4<f32>,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    pub name: String,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the given samples into a contiguous batch, converting to the
    /// requested scalar type.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> (Tensor4<T>, Vec<u8>) {
        let [_, h, w, c] = self.images.dims();
        let per = self.images.sample_len();
        let mut batch = Tensor4::<T>::zeros(indices.len().max(1), h, w, c);
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            let src = self.images.sample_range(idx, idx + 1);
            let dst = &mut batch.data_mut()[row * per..(row + 1) * per];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::from_f32(*s);
            }
            labels.push(self.labels[idx]);
        }
        (batch, labels)
    }

    /// Keeps only the first `n` samples.
    pub fn truncated(mut self, n: usize) -> Result<Self> {
        let keep = n.min(self.len());
        if keep == 0 {
            return Err(Error::config("cannot truncate dataset to 0 samples"));
        }
        let [_, h, w, c] = self.images.dims();
        let per = self.images.sample_len();
        let mut data = self.images.into_data();
        data.truncate(keep * per);
        self.images = Tensor4::from_vec([keep, h, w, c], data)?;
        self.labels.truncate(keep);
        Ok(self)
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("file truncated while reading {what}"),
        ));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image/label file pair into a labeled set.
///
/// Images: big-endian magic 0x00000803, then n, h, w, then n·h·w unsigned
/// bytes. Labels: magic 0x00000801, then n, then n bytes.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet> {
    let img_bytes = fs::read(images_path)?;
    let magic = read_be_u32(&img_bytes, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = read_be_u32(&img_bytes, 4, "image count")? as usize;
    let h = read_be_u32(&img_bytes, 8, "image height")? as usize;
    let w = read_be_u32(&img_bytes, 12, "image width")? as usize;
    let need = 16 + n * h * w;
    if img_bytes.len() < need {
        return Err(Error::format(
            img_bytes.len() as u64,
            format!("image payload truncated: file has {} bytes, need {need}", img_bytes.len()),
        ));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::format(4, format!("degenerate image dims {n}x{h}x{w}")));
    }

    let lbl_bytes = fs::read(labels_path)?;
    let lmagic = read_be_u32(&lbl_bytes, 0, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let ln = read_be_u32(&lbl_bytes, 4, "label count")? as usize;
    if ln != n {
        return Err(Error::format(
            4,
            format!("label count {ln} does not match image count {n}"),
        ));
    }
    let lneed = 8 + ln;
    if lbl_bytes.len() < lneed {
        return Err(Error::format(
            lbl_bytes.len() as u64,
            format!("label payload truncated: file has {} bytes, need {lneed}", lbl_bytes.len()),
        ));
    }

    let data: Vec<f32> = img_bytes[16..need].iter().map(|&b| b as f32 / 255.0).collect();
    let labels = lbl_bytes[8..lneed].to_vec();
    let num_classes = (labels.iter().copied().max().unwrap_or(0) as usize + 1).max(2);
    Ok(LabeledSet {
        images: Tensor4::from_vec([n, h, w, 1], data)?,
        labels,
        num_classes,
        name: images_path.display().to_string(),
    })
}

/// Parses CIFAR-10 binary batch files: each record is 1 label byte followed
/// by 3072 pixel bytes as three 32×32 planes (R, G, B) in row-major order.
pub fn load_cifar10(batch_paths: &[impl AsRef<Path>]) -> Result<LabeledSet> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let bytes = fs::read(p.as_ref())?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(
                bytes.len() as u64,
                format!(
                    "{}: length {} is not a multiple of the {CIFAR_RECORD}-byte record",
                    p.as_ref().display(),
                    bytes.len()
                ),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            labels.push(rec[0]);
            let planes = &rec[1..];
            // Planes come channel-major; the tensor is channel-minor.
            for px in 0..32 * 32 {
                images.push(planes[px] as f32 / 255.0);
                images.push(planes[1024 + px] as f32 / 255.0);
                images.push(planes[2048 + px] as f32 / 255.0);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::config("CIFAR-10 batches contain no records"));
    }
    Ok(LabeledSet {
        images: Tensor4::from_vec([n, 32, 32, 3], images)?,
        labels,
        num_classes: 10,
        name: "cifar10".to_string(),
    })
}

/// Row i gets a 1 at labels[i], 0 elsewhere.
pub fn one_hot<T: Scalar>(labels: &[u8], num_classes: usize) -> Result<Vec<T>> {
    let mut out = vec![T::ZERO; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= num_classes {
            return Err(Error::config(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        out[i * num_classes + l as usize] = T::ONE;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub fn write_idx_pair(
        dir: &Path,
        images: &[Vec<u8>],
        labels: &[u8],
        h: usize,
        w: usize,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let img_path = dir.join("imgs-idx3-ubyte");
        let lbl_path = dir.join("lbls-idx1-ubyte");
        let mut f = fs::File::create(&img_path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&(h as u32).to_be_bytes()).unwrap();
        f.write_all(&(w as u32).to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
        let mut f = fs::File::create(&lbl_path).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (img_path, lbl_path)
    }

    #[test]
    fn crafted_two_image_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img0: Vec<u8> = (0..6).map(|i| i * 10).collect();
        let img1: Vec<u8> = (0..6).map(|i| 255 - i * 7).collect();
        let (ip, lp) = write_idx_pair(dir.path(), &[img0.clone(), img1.clone()], &[3, 9], 2, 3);
        let set = load_idx(&ip, &lp).unwrap();
        assert_eq!(set.images.dims(), [2, 2, 3, 1]);
        assert_eq!(set.labels, vec![3, 9]);
        for (v, &b) in set.images.data().iter().zip(img0.iter().chain(&img1)) {
            assert_eq!(*v, b as f32 / 255.0);
        }
    }

    #[test]
    fn parse_is_byte_exact_on_reserialization() {
        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<Vec<u8>> = (0..3)
            .map(|s| (0..4).map(|i| (s * 50 + i * 13) as u8).collect())
            .collect();
        let (ip, lp) = write_idx_pair(dir.path(), &imgs, &[0, 1, 2], 2, 2);
        let set = load_idx(&ip, &lp).unwrap();

        // Re-serialize from the parsed floats.
        let mut img_bytes = Vec::new();
        img_bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img_bytes.extend_from_slice(&3u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        for &v in set.images.data() {
            img_bytes.push((v * 255.0).round() as u8);
        }
        assert_eq!(img_bytes, fs::read(&ip).unwrap());

        let mut lbl_bytes = Vec::new();
        lbl_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl_bytes.extend_from_slice(&3u32.to_be_bytes());
        lbl_bytes.extend_from_slice(&set.labels);
        assert_eq!(lbl_bytes, fs::read(&lp).unwrap());
    }

    #[test]
    fn label_file_with_image_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = write_idx_pair(dir.path(), &[vec![0; 4]], &[1], 2, 2);
        // Use the image file as the label file: magic 0x803 where 0x801 is
        // required.
        let err = load_idx(&ip, &ip).unwrap_err();
        match err {
            Error::Format { offset, msg } => {
                assert_eq!(offset, 0);
                assert!(msg.contains("label magic"), "{msg}");
            }
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn truncated_image_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[vec![7; 4]], &[1], 2, 2);
        let full = fs::read(&ip).unwrap();
        fs::write(&ip, &full[..full.len() - 2]).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, (full.len() - 2) as u64),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn count_mismatch_between_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[vec![7; 4]], &[1, 2], 2, 2);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");
    }

    #[test]
    fn cifar_record_parses_planes_into_channels() {
        let dir = tempfile::tempdir().unwrap();
        let mut record = vec![0u8; CIFAR_RECORD];
        record[0] = 3; // label
        for px in 0..1024 {
            record[1 + px] = 255; // R plane
        }
        let path = dir.path().join("data_batch_1.bin");
        fs::write(&path, &record).unwrap();
        let set = load_cifar10(&[&path]).unwrap();
        assert_eq!(set.images.dims(), [1, 32, 32, 3]);
        assert_eq!(set.labels, vec![3]);
        for px in set.images.data().chunks_exact(3) {
            assert_eq!(px[0], 1.0);
            assert_eq!(px[1], 0.0);
            assert_eq!(px[2], 0.0);
        }
    }

    #[test]
    fn cifar_bad_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        fs::write(&path, vec![0u8; CIFAR_RECORD + 5]).unwrap();
        assert!(matches!(
            load_cifar10(&[&path]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn cifar_empty_file_rejected_as_configuration_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        fs::write(&path, Vec::<u8>::new()).unwrap();
        assert!(matches!(load_cifar10(&[&path]), Err(Error::Config(_))));
    }

    #[test]
    fn one_hot_rows_sum_to_one_and_round_trip() {
        let labels = [0u8, 2, 1, 2];
        let m = one_hot::<f32>(&labels, 3).unwrap();
        for (i, row) in m.chunks_exact(3).enumerate() {
            assert_eq!(row.iter().sum::<f32>(), 1.0);
            let arg = row.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(arg, labels[i] as usize);
        }
        assert_eq!(&m[0..3], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn one_hot_rejects_out_of_range_label() {
        assert!(one_hot::<f32>(&[3], 3).is_err());
    }
}
