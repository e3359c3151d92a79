//! Single-file packed image datasets.
//!
//! Layout (little-endian throughout, see `docs/format.md`):
//!
//! ```text
//! 0      header (64 bytes)
//! 64     descriptor table, sample_count × 24 bytes
//! ...    zero padding up to the next 4096-byte boundary
//! data   payloads, contiguous, in descriptor order
//! ```
//!
//! Readers memory-map the file and decode descriptors on demand, so opening a
//! dataset costs a header parse regardless of its size.

use std::borrow::Borrow;
use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageRecord};
use crate::source::SampleSource;

pub const MAGIC: [u8; 4] = *b"SSLP";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;
pub const DESCRIPTOR_LEN: usize = 24;
pub const PAGE_ALIGN: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    Raw,
    Jpeg,
}

impl EncodingMode {
    fn to_byte(self) -> u8 {
        match self {
            EncodingMode::Raw => 0,
            EncodingMode::Jpeg => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EncodingMode::Raw),
            1 => Some(EncodingMode::Jpeg),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub magic: [u8; 4],
    pub format_version: u32,
    pub sample_count: u64,
    pub encoding_mode: EncodingMode,
    pub max_height: u16,
    pub max_width: u16,
    pub channels: u8,
    pub descriptor_table_offset: u64,
    pub data_region_offset: u64,
}

impl DatasetHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&self.magic);
        b[4..8].copy_from_slice(&self.format_version.to_le_bytes());
        b[8..16].copy_from_slice(&self.sample_count.to_le_bytes());
        b[16] = self.encoding_mode.to_byte();
        b[17] = self.channels;
        b[18..20].copy_from_slice(&self.max_height.to_le_bytes());
        b[20..22].copy_from_slice(&self.max_width.to_le_bytes());
        b[24..32].copy_from_slice(&self.descriptor_table_offset.to_le_bytes());
        b[32..40].copy_from_slice(&self.data_region_offset.to_le_bytes());
        b
    }

    /// Parses a header. `bytes` may be shorter than a full header, in which
    /// case the file is reported as truncated once the magic is known good.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, expected \"SSLP\"".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptFile(format!(
                "header truncated at {} bytes",
                bytes.len()
            )));
        }
        let format_version = u32_at(bytes, 4);
        if format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {format_version}"
            )));
        }
        let encoding_mode = EncodingMode::from_byte(bytes[16])
            .ok_or_else(|| Error::Format(format!("unknown encoding mode {}", bytes[16])))?;
        let header = Self {
            magic: MAGIC,
            format_version,
            sample_count: u64_at(bytes, 8),
            encoding_mode,
            channels: bytes[17],
            max_height: u16_at(bytes, 18),
            max_width: u16_at(bytes, 20),
            descriptor_table_offset: u64_at(bytes, 24),
            data_region_offset: u64_at(bytes, 32),
        };
        if header.sample_count == 0 {
            return Err(Error::Format("sample_count is zero".into()));
        }
        if header.channels == 0 {
            return Err(Error::Format("channel count is zero".into()));
        }
        Ok(header)
    }

    fn descriptor_table_end(&self) -> Option<u64> {
        self.sample_count
            .checked_mul(DESCRIPTOR_LEN as u64)?
            .checked_add(self.descriptor_table_offset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDescriptor {
    pub byte_offset: u64,
    pub byte_length: u32,
    pub height: u16,
    pub width: u16,
    pub label: u32,
    pub checksum: u32,
}

impl SampleDescriptor {
    pub fn encode(&self) -> [u8; DESCRIPTOR_LEN] {
        let mut b = [0u8; DESCRIPTOR_LEN];
        b[0..8].copy_from_slice(&self.byte_offset.to_le_bytes());
        b[8..12].copy_from_slice(&self.byte_length.to_le_bytes());
        b[12..14].copy_from_slice(&self.height.to_le_bytes());
        b[14..16].copy_from_slice(&self.width.to_le_bytes());
        b[16..20].copy_from_slice(&self.label.to_le_bytes());
        b[20..24].copy_from_slice(&self.checksum.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Self {
        Self {
            byte_offset: u64_at(b, 0),
            byte_length: u32_at(b, 8),
            height: u16_at(b, 12),
            width: u16_at(b, 14),
            label: u32_at(b, 16),
            checksum: u32_at(b, 20),
        }
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn checksum(payload: &[u8]) -> u32 {
    crc32fast::hash(payload)
}

fn align_up(v: u64, align: u64) -> u64 {
    v.div_ceil(align) * align
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackOptions {
    pub encoding_mode: EncodingMode,
    pub jpeg_quality: u8,
}

impl Default for PackOptions {
    fn default() -> Self {
        Self {
            encoding_mode: EncodingMode::Raw,
            jpeg_quality: 90,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackSummary {
    pub sample_count: u64,
    pub file_bytes: u64,
    pub encoding_mode: EncodingMode,
    pub channels: u8,
    pub max_height: u16,
    pub max_width: u16,
}

fn encode_payload(img: &Image, options: &PackOptions) -> Result<Vec<u8>> {
    match options.encoding_mode {
        EncodingMode::Raw => Ok(img.data().to_vec()),
        EncodingMode::Jpeg => {
            let color = match img.channels() {
                1 => ExtendedColorType::L8,
                3 => ExtendedColorType::Rgb8,
                c => {
                    return Err(Error::Codec(format!(
                        "JPEG encoding supports 1 or 3 channels, got {c}"
                    )))
                }
            };
            let mut out = Vec::new();
            JpegEncoder::new_with_quality(&mut out, options.jpeg_quality)
                .encode(img.data(), img.width() as u32, img.height() as u32, color)
                .map_err(|e| Error::Codec(e.to_string()))?;
            Ok(out)
        }
    }
}

/// Writes `records` to a packed dataset at `path`, preserving their order.
pub fn pack_dataset<I, R>(path: impl AsRef<Path>, records: I, options: &PackOptions) -> Result<PackSummary>
where
    I: IntoIterator<Item = R>,
    I::IntoIter: ExactSizeIterator,
    R: Borrow<ImageRecord>,
{
    let path = path.as_ref();
    let records = records.into_iter();
    let count = records.len();
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    if options.encoding_mode == EncodingMode::Jpeg && !(1..=100).contains(&options.jpeg_quality) {
        return Err(Error::InvalidParam(format!(
            "jpeg_quality must be in 1..=100, got {}",
            options.jpeg_quality
        )));
    }

    let table_offset = HEADER_LEN as u64;
    let data_offset = align_up(table_offset + (count * DESCRIPTOR_LEN) as u64, PAGE_ALIGN);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.seek(SeekFrom::Start(data_offset)).map_err(io)?;

    let mut descriptors = Vec::with_capacity(count);
    let mut channels: Option<usize> = None;
    let (mut max_h, mut max_w) = (0u16, 0u16);
    let mut cursor = data_offset;
    for (index, rec) in records.enumerate() {
        let rec = rec.borrow();
        let img = &rec.image;
        match channels {
            None => channels = Some(img.channels()),
            Some(c) if c != img.channels() => {
                return Err(Error::ShapeMismatch(format!(
                    "sample {index} has {} channels, earlier samples have {c}",
                    img.channels()
                )))
            }
            _ => {}
        }
        let (h, w) = (img.height(), img.width());
        if h > u16::MAX as usize || w > u16::MAX as usize || img.channels() > u8::MAX as usize {
            return Err(Error::ShapeMismatch(format!(
                "sample {index} is {h}x{w}x{}, beyond the format's limits",
                img.channels()
            )));
        }
        let payload = encode_payload(img, options).map_err(|e| e.at_sample(index))?;
        let byte_length = u32::try_from(payload.len())
            .map_err(|_| Error::ShapeMismatch(format!("sample {index} payload exceeds 4 GiB")))?;
        out.write_all(&payload).map_err(io)?;
        descriptors.push(SampleDescriptor {
            byte_offset: cursor,
            byte_length,
            height: h as u16,
            width: w as u16,
            label: rec.label,
            checksum: checksum(&payload),
        });
        cursor += payload.len() as u64;
        max_h = max_h.max(h as u16);
        max_w = max_w.max(w as u16);
    }
    if descriptors.len() != count {
        return Err(Error::ShapeMismatch(format!(
            "iterator reported {count} records but yielded {}",
            descriptors.len()
        )));
    }

    let header = DatasetHeader {
        magic: MAGIC,
        format_version: FORMAT_VERSION,
        sample_count: count as u64,
        encoding_mode: options.encoding_mode,
        max_height: max_h,
        max_width: max_w,
        channels: channels.unwrap_or(0) as u8,
        descriptor_table_offset: table_offset,
        data_region_offset: data_offset,
    };
    out.seek(SeekFrom::Start(0)).map_err(io)?;
    out.write_all(&header.encode()).map_err(io)?;
    for d in &descriptors {
        out.write_all(&d.encode()).map_err(io)?;
    }
    out.flush().map_err(io)?;
    out.get_ref().sync_all().map_err(io)?;

    Ok(PackSummary {
        sample_count: count as u64,
        file_bytes: cursor,
        encoding_mode: options.encoding_mode,
        channels: header.channels,
        max_height: max_h,
        max_width: max_w,
    })
}

/// An open, memory-mapped packed dataset. Immutable and shareable across threads.
#[derive(Debug)]
pub struct DatasetHandle {
    path: PathBuf,
    map: Mmap,
    header: DatasetHeader,
}

pub fn open_dataset(path: impl AsRef<Path>) -> Result<DatasetHandle> {
    DatasetHandle::open(path)
}

impl DatasetHandle {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if len == 0 {
            return Err(Error::Format("file is empty".into()));
        }
        // SAFETY: the mapping is read-only; the format is append-free and
        // writers never modify a file after packing it.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(&path, e))?;
        let header = DatasetHeader::decode(&map)?;
        let table_end = header
            .descriptor_table_end()
            .ok_or_else(|| Error::CorruptFile("descriptor table size overflows".into()))?;
        if header.descriptor_table_offset < HEADER_LEN as u64 || table_end > len {
            return Err(Error::CorruptFile(format!(
                "descriptor table spans bytes {}..{table_end} but file has {len}",
                header.descriptor_table_offset
            )));
        }
        if header.data_region_offset < table_end || header.data_region_offset > len {
            return Err(Error::CorruptFile(format!(
                "data region offset {} outside {table_end}..={len}",
                header.data_region_offset
            )));
        }
        Ok(Self { path, map, header })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn sample_count(&self) -> usize {
        self.header.sample_count as usize
    }

    pub fn file_len(&self) -> u64 {
        self.map.len() as u64
    }

    pub fn descriptor(&self, index: usize) -> Result<SampleDescriptor> {
        if index >= self.sample_count() {
            return Err(Error::Index {
                index,
                len: self.sample_count(),
            });
        }
        let at = self.header.descriptor_table_offset as usize + index * DESCRIPTOR_LEN;
        Ok(SampleDescriptor::decode(&self.map[at..at + DESCRIPTOR_LEN]))
    }

    fn payload(&self, d: &SampleDescriptor) -> Option<&[u8]> {
        let start = usize::try_from(d.byte_offset).ok()?;
        let end = start.checked_add(d.byte_length as usize)?;
        self.map.get(start..end)
    }

    /// Reads and decodes sample `index`, verifying its checksum.
    pub fn read_sample(&self, index: usize) -> Result<ImageRecord> {
        let d = self.descriptor(index)?;
        let payload = self.payload(&d).ok_or_else(|| {
            Error::CorruptFile(format!(
                "sample {index} payload {}+{} lies outside the file",
                d.byte_offset, d.byte_length
            ))
        })?;
        if checksum(payload) != d.checksum {
            return Err(Error::CorruptSample { index });
        }
        let (h, w, c) = (
            d.height as usize,
            d.width as usize,
            self.header.channels as usize,
        );
        let image = match self.header.encoding_mode {
            EncodingMode::Raw => {
                Image::new(h, w, c, payload.to_vec()).map_err(|_| Error::CorruptSample { index })?
            }
            EncodingMode::Jpeg => decode_jpeg(payload, h, w, c).map_err(|e| e.at_sample(index))?,
        };
        Ok(ImageRecord::new(image, d.label))
    }

    /// Checks every descriptor and payload; never fails, failures are counted.
    pub fn validate(&self) -> ValidationReport {
        let n = self.sample_count();
        let mut report = ValidationReport {
            sample_count: n as u64,
            data_region_aligned: self.header.data_region_offset % PAGE_ALIGN == 0,
            data_region_offset: self.header.data_region_offset,
            ..ValidationReport::default()
        };
        let mut prev: Option<u64> = None;
        for i in 0..n {
            let d = self.descriptor(i).expect("index in range");
            if d.byte_offset < self.header.data_region_offset {
                report.offset_violations.push(i);
            }
            if let Some(p) = prev {
                if d.byte_offset <= p {
                    report.offset_violations.push(i);
                }
            }
            prev = Some(d.byte_offset);
            if d.height > self.header.max_height || d.width > self.header.max_width {
                report.dimension_violations.push(i);
            }
            match self.payload(&d) {
                Some(p) if checksum(p) == d.checksum => report.checksum_passed += 1,
                _ => {
                    report.checksum_failed += 1;
                    report.failed_indices.push(i);
                }
            }
        }
        report.offset_violations.dedup();
        report
    }
}

pub fn read_sample(handle: &DatasetHandle, index: usize) -> Result<ImageRecord> {
    handle.read_sample(index)
}

pub fn validate(handle: &DatasetHandle) -> ValidationReport {
    handle.validate()
}

fn decode_jpeg(payload: &[u8], h: usize, w: usize, c: usize) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(payload, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let data = match c {
        1 => decoded.into_luma8().into_raw(),
        3 => decoded.into_rgb8().into_raw(),
        _ => return Err(Error::Codec(format!("cannot decode JPEG into {c} channels"))),
    };
    Image::new(h, w, c, data)
        .map_err(|_| Error::Codec(format!("decoded JPEG does not match {h}x{w}x{c}")))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sample_count: u64,
    pub checksum_passed: u64,
    pub checksum_failed: u64,
    pub failed_indices: Vec<usize>,
    pub data_region_offset: u64,
    pub data_region_aligned: bool,
    /// Samples whose offset precedes the data region or does not increase.
    pub offset_violations: Vec<usize>,
    pub dimension_violations: Vec<usize>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.checksum_failed == 0
            && self.data_region_aligned
            && self.offset_violations.is_empty()
            && self.dimension_violations.is_empty()
    }
}

impl SampleSource for DatasetHandle {
    fn len(&self) -> usize {
        self.sample_count()
    }

    fn read(&self, index: usize) -> Result<ImageRecord> {
        self.read_sample(index)
    }

    fn mean_sample_bytes(&self) -> usize {
        let data = self.file_len().saturating_sub(self.header.data_region_offset);
        ((data / self.header.sample_count.max(1)) as usize).max(1)
    }
}
