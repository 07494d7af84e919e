//! In-memory RGB24 frame model and the FGRV1 raw video container.
//!
//! An FGRV1 file is the ASCII magic line `FGRV1\n`, an ASCII header line
//! `W H FPS N\n` (decimal, single spaces) and then `N` frames of raw RGB24
//! bytes, row-major, with no padding. The container is bytes only, so a file
//! hashes identically on every platform.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::color::Rgb;
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"FGRV1\n";

const MAX_DIMENSION: usize = u16::MAX as usize;
const MAX_HEADER_LINE: u64 = 64;

/// Borrowed view of a single RGB24 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame<'a> {
    width: usize,
    height: usize,
    data: &'a [u8],
}

impl<'a> Frame<'a> {
    /// Panics if `data` is not exactly `width * height * 3` bytes.
    pub fn new(width: usize, height: usize, data: &'a [u8]) -> Self {
        assert_eq!(
            data.len(),
            width * height * 3,
            "frame data does not match {width}x{height}"
        );
        Frame {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn as_bytes(&self) -> &'a [u8] {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn pixel_at(&self, index: usize) -> Rgb {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + 'a {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Fixed-size RGB24 frame sequence. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoBuffer {
    width: usize,
    height: usize,
    fps: u32,
    data: Vec<u8>,
}

impl VideoBuffer {
    /// Builds a buffer from contiguous frame bytes.
    pub fn new(width: usize, height: usize, fps: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
            return Err(Error::InvalidVideo(format!(
                "dimensions {width}x{height} outside 1..={MAX_DIMENSION}"
            )));
        }
        if fps == 0 {
            return Err(Error::InvalidVideo("fps must be at least 1".into()));
        }
        let frame_len = width * height * 3;
        if data.is_empty() || !data.len().is_multiple_of(frame_len) {
            return Err(Error::InvalidVideo(format!(
                "{} bytes is not a positive whole number of {width}x{height} frames",
                data.len()
            )));
        }
        Ok(VideoBuffer {
            width,
            height,
            fps,
            data,
        })
    }

    pub fn from_frames<I>(width: usize, height: usize, fps: u32, frames: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: AsRef<[u8]>,
    {
        let frame_len = width * height * 3;
        let mut data = Vec::new();
        for (i, frame) in frames.into_iter().enumerate() {
            let frame = frame.as_ref();
            if frame.len() != frame_len {
                return Err(Error::InvalidVideo(format!(
                    "frame {i} has {} bytes, expected {frame_len}",
                    frame.len()
                )));
            }
            data.extend_from_slice(frame);
        }
        Self::new(width, height, fps, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height * 3
    }

    pub fn frame_count(&self) -> usize {
        self.data.len() / self.frame_len()
    }

    /// `frame_count / fps`. Exact whenever the ratio is representable.
    pub fn duration_seconds(&self) -> f64 {
        self.frame_count() as f64 / f64::from(self.fps)
    }

    pub fn frame(&self, index: usize) -> Frame<'_> {
        let len = self.frame_len();
        Frame::new(
            self.width,
            self.height,
            &self.data[index * len..(index + 1) * len],
        )
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = Frame<'_>> + '_ {
        self.data
            .chunks_exact(self.frame_len())
            .map(move |d| Frame::new(self.width, self.height, d))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Applies `f` to a copy of every frame's bytes.
    pub fn map_frames<F>(&self, mut f: F) -> VideoBuffer
    where
        F: FnMut(usize, &mut [u8]),
    {
        let mut data = self.data.clone();
        let len = self.frame_len();
        for (i, frame) in data.chunks_exact_mut(len).enumerate() {
            f(i, frame);
        }
        VideoBuffer { data, ..*self }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(MAGIC)?;
        writeln!(
            out,
            "{} {} {} {}",
            self.width,
            self.height,
            self.fps,
            self.frame_count()
        )?;
        out.write_all(&self.data)?;
        out.flush()
    }
}

pub fn write_video(v: &VideoBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    v.write_to(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

pub fn read_video(path: impl AsRef<Path>) -> Result<VideoBuffer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(BufReader::new(file), path)
}

/// Parses an FGRV1 stream. `path` is used only for error context.
pub fn read_from<R: BufRead>(mut input: R, path: &Path) -> Result<VideoBuffer> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };

    let magic = read_line(&mut input, path)?;
    if magic != MAGIC {
        return Err(format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic).trim_end()
        )));
    }

    let header = read_line(&mut input, path)?;
    let header = std::str::from_utf8(&header)
        .ok()
        .and_then(|h| h.strip_suffix('\n'))
        .ok_or_else(|| format("header is not an ASCII line".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields.iter().any(|f| f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit())) {
        return Err(format(format!("malformed header {header:?}")));
    }
    let parse = |s: &str| -> Result<u64> {
        s.parse::<u64>()
            .map_err(|_| format(format!("header field {s:?} out of range")))
    };
    let (width, height, fps, count) = (
        parse(fields[0])?,
        parse(fields[1])?,
        parse(fields[2])?,
        parse(fields[3])?,
    );
    if width == 0 || height == 0 || width > MAX_DIMENSION as u64 || height > MAX_DIMENSION as u64 {
        return Err(format(format!("dimensions {width}x{height} out of range")));
    }
    let fps = u32::try_from(fps)
        .ok()
        .filter(|&f| f >= 1)
        .ok_or_else(|| format(format!("fps {fps} out of range")))?;
    if count == 0 {
        return Err(format("frame count must be at least 1".into()));
    }

    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .and_then(|f| f.checked_mul(count))
        .ok_or_else(|| format("payload size overflows".into()))?;
    let mut data = Vec::new();
    let found = (&mut input)
        .take(expected)
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))? as u64;
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
        return Err(format("trailing bytes after the last frame".into()));
    }

    VideoBuffer::new(width as usize, height as usize, fps, data).map_err(|e| format(e.to_string()))
}

fn read_line<R: BufRead>(input: &mut R, path: &Path) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    input
        .take(MAX_HEADER_LINE)
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    Ok(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(v: &VideoBuffer) -> Vec<u8> {
        let mut out = Vec::new();
        v.write_to(&mut out).unwrap();
        out
    }

    fn decode(bytes: &[u8]) -> Result<VideoBuffer> {
        read_from(bytes, Path::new("mem"))
    }

    #[test]
    fn black_pixel_pair_layout() {
        let v = VideoBuffer::new(2, 1, 30, vec![0; 6]).unwrap();
        let bytes = encode(&v);
        assert_eq!(&bytes[..], b"FGRV1\n2 1 30 1\n\0\0\0\0\0\0");
    }

    #[test]
    fn payload_size_for_raster_clip() {
        let v = VideoBuffer::new(341, 256, 30, vec![7; 341 * 256 * 3 * 300]).unwrap();
        let bytes = encode(&v);
        let header = b"FGRV1\n341 256 30 300\n".len();
        assert_eq!(bytes.len() - header, 341 * 256 * 3 * 300);
        assert_eq!(v.duration_seconds(), 10.0);
    }

    #[test]
    fn rejects_other_magic() {
        let err = decode(b"FGRV2\n1 1 1 1\n\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = b"FGRV1\n1 1 30 10\n".to_vec();
        bytes.extend_from_slice(&[1; 27]);
        match decode(&bytes).unwrap_err() {
            Error::Truncated {
                expected, found, ..
            } => {
                assert_eq!(expected, 30);
                assert_eq!(found, 27);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_malformed_headers() {
        for bad in [
            &b"FGRV1\n1 1 30\n\0\0\0"[..],
            b"FGRV1\n1  1 30 1\n\0\0\0",
            b"FGRV1\n0 1 30 1\n",
            b"FGRV1\n1 1 0 1\n\0\0\0",
            b"FGRV1\n1 1 30 0\n",
            b"FGRV1\n1 1 30 1\n\0\0\0\0",
            b"FGRV1",
        ] {
            assert!(decode(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn constructor_invariants() {
        assert!(VideoBuffer::new(2, 2, 0, vec![0; 12]).is_err());
        assert!(VideoBuffer::new(2, 2, 30, vec![]).is_err());
        assert!(VideoBuffer::new(2, 2, 30, vec![0; 13]).is_err());
        assert!(VideoBuffer::new(70_000, 1, 30, vec![0; 210_000]).is_err());
        assert!(VideoBuffer::from_frames(1, 1, 30, [vec![0u8; 3], vec![0u8; 4]]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.fgrv");
        let v = VideoBuffer::from_frames(3, 2, 24, [vec![1u8; 18], vec![200u8; 18]]).unwrap();
        write_video(&v, &path).unwrap();
        assert_eq!(read_video(&path).unwrap(), v);
        let missing = dir.path().join("nope.fgrv");
        assert!(matches!(read_video(&missing), Err(Error::Io { .. })));
    }

    fn arb_video() -> impl Strategy<Value = VideoBuffer> {
        (1usize..9, 1usize..9, 1u32..120, 1usize..5).prop_flat_map(|(w, h, fps, n)| {
            proptest::collection::vec(any::<u8>(), w * h * 3 * n)
                .prop_map(move |data| VideoBuffer::new(w, h, fps, data).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn write_then_read_is_identity(v in arb_video()) {
            let bytes = encode(&v);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
