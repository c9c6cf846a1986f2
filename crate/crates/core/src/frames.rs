//! Frame and region data model, superpixel binning, and the TBF frame file format.
//!
//! Frames are row-major with the origin at the top-left corner: `x` is the
//! column index and `y` the row index. Entries are photoelectron counts stored
//! as `f32`, which is also the on-disk representation, so a write/read cycle is
//! bit-exact.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Magic bytes opening every TBF file.
pub const TBF_MAGIC: &[u8; 4] = b"TBF1";
const TBF_HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// A 2D grid of photoelectron counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixel_pitch: f64,
    data: Vec<f32>,
    readout: bool,
}

impl Frame {
    /// Builds a frame from row-major data. The frame counts as read out
    /// (it may carry read noise), so hardware binning is refused on it.
    pub fn new(width: usize, height: usize, pixel_pitch: f64, data: Vec<f32>) -> Result<Self> {
        Self::build(width, height, pixel_pitch, data, true)
    }

    /// Builds a frame of pure photon counts, before any read-out stage.
    ///
    /// Every entry must be a non-negative integer value.
    pub fn photon_counts(
        width: usize,
        height: usize,
        pixel_pitch: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        if let Some(bad) = data.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::InvalidFrame(format!(
                "photon frame entry {bad} is not a non-negative integer"
            )));
        }
        Self::build(width, height, pixel_pitch, data, false)
    }

    pub fn zeros(width: usize, height: usize, pixel_pitch: f64) -> Result<Self> {
        Self::build(width, height, pixel_pitch, vec![0.0; width * height], false)
    }

    fn build(
        width: usize,
        height: usize,
        pixel_pitch: f64,
        data: Vec<f32>,
        readout: bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!(
                "zero-area frame {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidFrame("dimension overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidFrame(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(Error::InvalidFrame(format!(
                "pixel pitch must be positive, got {pixel_pitch}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch,
            data,
            readout,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Pixel pitch in micrometers.
    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Whether a read-out stage has been applied (read noise possibly present).
    pub fn is_readout(&self) -> bool {
        self.readout
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn region(&self) -> Region {
        Region::new(0, 0, self.width, self.height)
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Rectangular analysis region in pixel coordinates of its frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub const fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    /// A `width`x`height` region centered in a `frame_width`x`frame_height` frame.
    pub fn centered(frame_width: usize, frame_height: usize, width: usize, height: usize) -> Self {
        Self::new(
            frame_width.saturating_sub(width) / 2,
            frame_height.saturating_sub(height) / 2,
            width,
            height,
        )
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 + self.width <= width && self.y0 + self.height <= height
    }

    pub fn check_in(&self, frame: &Frame) -> Result<()> {
        if self.is_empty() || !self.fits(frame.width, frame.height) {
            return Err(Error::RegionOutOfBounds {
                region: self.to_string(),
                width: frame.width,
                height: frame.height,
            });
        }
        Ok(())
    }

    /// Checks the region fits and holds enough samples for a variance.
    pub fn check_stats(&self, frame: &Frame) -> Result<()> {
        self.check_in(frame)?;
        if self.len() < 2 {
            return Err(Error::DegenerateRegion(format!(
                "{self} has fewer than 2 pixels"
            )));
        }
        Ok(())
    }

    /// The same region expressed in a grid binned by `factor`.
    ///
    /// Fails unless origin and size are multiples of the factor.
    pub fn binned(&self, factor: usize) -> Result<Region> {
        if factor == 0
            || !self.x0.is_multiple_of(factor)
            || !self.y0.is_multiple_of(factor)
            || !self.width.is_multiple_of(factor)
            || !self.height.is_multiple_of(factor)
        {
            return Err(Error::Binning(format!(
                "region {self} is not aligned to {factor}x{factor} superpixels"
            )));
        }
        Ok(Region::new(
            self.x0 / factor,
            self.y0 / factor,
            self.width / factor,
            self.height / factor,
        ))
    }

    /// Row-major iterator over `(x, y)` pixel coordinates.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y0 + self.height)
            .flat_map(move |y| (self.x0..self.x0 + self.width).map(move |x| (x, y)))
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}+{}+{}", self.width, self.height, self.x0, self.y0)
    }
}

/// Real-valued displacement in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0.0, dy: 0.0 };

    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.dx * s, self.dy * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinKind {
    /// Charge summed on chip; one read per superpixel.
    Hardware,
    /// Pixels read individually and summed afterwards.
    Software,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BinMode {
    pub factor: usize,
    pub kind: BinKind,
}

impl BinMode {
    pub const NONE: BinMode = BinMode {
        factor: 1,
        kind: BinKind::Software,
    };

    pub const fn software(factor: usize) -> Self {
        Self {
            factor,
            kind: BinKind::Software,
        }
    }

    pub const fn hardware(factor: usize) -> Self {
        Self {
            factor,
            kind: BinKind::Hardware,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Binning("bin factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sums `factor`x`factor` blocks into superpixels.
///
/// With `truncate` unset, frame dimensions must be divisible by the factor;
/// with it set, trailing rows and columns are dropped. Hardware mode is
/// refused on frames that already went through read-out, since the read
/// noise can no longer be applied once per superpixel.
pub fn bin_frame(frame: &Frame, bin: BinMode, truncate: bool) -> Result<Frame> {
    bin.validate()?;
    if bin.kind == BinKind::Hardware && frame.readout {
        return Err(Error::Binning(
            "hardware binning requested on a frame that was already read out".into(),
        ));
    }
    let f = bin.factor;
    if f == 1 {
        return Ok(frame.clone());
    }
    if !truncate && (!frame.width.is_multiple_of(f) || !frame.height.is_multiple_of(f)) {
        return Err(Error::Binning(format!(
            "{}x{} frame is not divisible by bin factor {f}",
            frame.width, frame.height
        )));
    }
    let (w, h) = (frame.width / f, frame.height / f);
    if w == 0 || h == 0 {
        return Err(Error::Binning(format!(
            "bin factor {f} exceeds frame size {}x{}",
            frame.width, frame.height
        )));
    }
    let mut acc = vec![0.0f64; w * h];
    for y in 0..h * f {
        let row = &frame.data[y * frame.width..y * frame.width + w * f];
        let out = &mut acc[(y / f) * w..(y / f + 1) * w];
        for (x, v) in row.iter().enumerate() {
            out[x / f] += *v as f64;
        }
    }
    Ok(Frame {
        width: w,
        height: h,
        pixel_pitch: frame.pixel_pitch * f as f64,
        data: acc.into_iter().map(|v| v as f32).collect(),
        readout: frame.readout,
    })
}

/// Averages `factor`x`factor` blocks. Used to bring a per-pixel gain map to
/// superpixel scale.
pub fn block_mean(frame: &Frame, factor: usize) -> Result<Frame> {
    let summed = bin_frame(
        &Frame {
            readout: false,
            ..frame.clone()
        },
        BinMode::software(factor),
        false,
    )?;
    let norm = (factor * factor) as f32;
    Ok(Frame {
        data: summed.data.into_iter().map(|v| v / norm).collect(),
        readout: frame.readout,
        ..summed
    })
}

/// Divides a frame by a relative gain map of identical shape.
pub fn flat_field(frame: &Frame, gain: &Frame) -> Result<Frame> {
    if !frame.same_shape(gain) {
        return Err(Error::InvalidFrame(format!(
            "gain map {}x{} does not match frame {}x{}",
            gain.width, gain.height, frame.width, frame.height
        )));
    }
    let data = frame
        .data
        .iter()
        .zip(&gain.data)
        .map(|(v, g)| if *g > 0.0 { v / g } else { 0.0 })
        .collect();
    Ok(Frame {
        data,
        readout: true,
        ..frame.clone()
    })
}

pub fn extract_region(frame: &Frame, region: Region) -> Result<Frame> {
    region.check_in(frame)?;
    let mut data = Vec::with_capacity(region.len());
    for y in region.y0..region.y0 + region.height {
        let start = y * frame.width + region.x0;
        data.extend_from_slice(&frame.data[start..start + region.width]);
    }
    Ok(Frame {
        width: region.width,
        height: region.height,
        pixel_pitch: frame.pixel_pitch,
        data,
        readout: frame.readout,
    })
}

/// Serializes a frame to TBF bytes.
pub fn encode_tbf(frame: &Frame) -> Result<Vec<u8>> {
    let w =
        u32::try_from(frame.width).map_err(|_| Error::InvalidFrame("width exceeds u32".into()))?;
    let h = u32::try_from(frame.height)
        .map_err(|_| Error::InvalidFrame("height exceeds u32".into()))?;
    let mut out = Vec::with_capacity(TBF_HEADER_LEN + 4 * frame.data.len());
    out.extend_from_slice(TBF_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&frame.pixel_pitch.to_le_bytes());
    for v in &frame.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses TBF bytes. `path` is only used for diagnostics.
pub fn decode_tbf(bytes: &[u8], path: &Path) -> Result<Frame> {
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < TBF_HEADER_LEN {
        return Err(fail(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != TBF_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..4])));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let pitch = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let payload = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(format!("dimension overflow {width}x{height}")))?;
    let body = &bytes[TBF_HEADER_LEN..];
    if body.len() < payload {
        return Err(fail(format!(
            "truncated payload: expected {payload} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > payload {
        return Err(fail(format!(
            "{} trailing bytes after payload",
            body.len() - payload
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Frame::new(width, height, pitch, data).map_err(|e| fail(e.to_string()))
}

pub fn write_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tbf(frame)?;
    let mut file = fs::File::create(path).map_err(Error::file(path))?;
    file.write_all(&bytes).map_err(Error::file(path))?;
    Ok(())
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::file(path))?;
    decode_tbf(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(w: usize, h: usize, data: &[f32]) -> Frame {
        Frame::photon_counts(w, h, 20.0, data.to_vec()).unwrap()
    }

    #[test]
    fn bin_2x2_sums_block() {
        let f = frame(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = bin_frame(&f, BinMode::software(2), false).unwrap();
        assert_eq!((b.width(), b.height()), (1, 1));
        assert_eq!(b.data(), &[10.0]);
        assert_eq!(b.pixel_pitch(), 40.0);
    }

    #[test]
    fn bin_factor_one_is_identity() {
        let f = frame(3, 2, &[1.0, 5.0, 2.0, 0.0, 7.0, 3.0]);
        assert_eq!(bin_frame(&f, BinMode::software(1), false).unwrap(), f);
    }

    #[test]
    fn analysis_region_gives_289_superpixels() {
        let f = Frame::zeros(136, 136, 20.0).unwrap();
        let b = bin_frame(&f, BinMode::software(8), false).unwrap();
        assert_eq!((b.width(), b.height()), (17, 17));
        assert_eq!(b.data().len(), 289);
        assert_eq!(b.pixel_pitch(), 160.0);
    }

    #[test]
    fn non_divisible_binning() {
        let f = Frame::zeros(10, 9, 20.0).unwrap();
        assert!(matches!(
            bin_frame(&f, BinMode::software(4), false),
            Err(Error::Binning(_))
        ));
        let b = bin_frame(&f, BinMode::software(4), true).unwrap();
        assert_eq!((b.width(), b.height()), (2, 2));
    }

    #[test]
    fn hardware_binning_on_readout_frame_is_rejected() {
        let f = Frame::new(4, 4, 20.0, vec![1.5; 16]).unwrap();
        assert!(bin_frame(&f, BinMode::hardware(2), false).is_err());
        assert!(bin_frame(&f, BinMode::software(2), false).is_ok());
        let p = Frame::zeros(4, 4, 20.0).unwrap();
        assert!(bin_frame(&p, BinMode::hardware(2), false).is_ok());
    }

    #[test]
    fn photon_frames_must_be_integral() {
        assert!(Frame::photon_counts(1, 2, 20.0, vec![1.0, 2.5]).is_err());
        assert!(Frame::photon_counts(1, 2, 20.0, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn invalid_frames() {
        assert!(Frame::new(0, 3, 20.0, vec![]).is_err());
        assert!(Frame::new(2, 2, 20.0, vec![0.0; 3]).is_err());
        assert!(Frame::new(2, 2, 0.0, vec![0.0; 4]).is_err());
    }

    #[test]
    fn extract_region_cases() {
        let f = frame(3, 3, &[0., 1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(extract_region(&f, f.region()).unwrap(), f);
        let one = frame(1, 1, &[5.0]);
        assert_eq!(
            extract_region(&one, Region::new(0, 0, 1, 1))
                .unwrap()
                .data(),
            &[5.0]
        );
        let sub = extract_region(&f, Region::new(1, 1, 2, 2)).unwrap();
        assert_eq!(sub.data(), &[4., 5., 7., 8.]);
        assert!(extract_region(&f, Region::new(2, 2, 2, 1)).is_err());
    }

    #[test]
    fn extract_matches_index_arithmetic() {
        let data: Vec<f32> = (0..272 * 272).map(|i| (i % 977) as f32).collect();
        let f = Frame::photon_counts(272, 272, 20.0, data).unwrap();
        let r = Region::new(68, 68, 136, 136);
        let sub = extract_region(&f, r).unwrap();
        for (y, x) in [(0, 0), (135, 135), (17, 100), (99, 3)] {
            let direct = ((68 + y) * 272 + 68 + x) % 977;
            assert_eq!(sub.get(x, y), direct as f32);
        }
    }

    #[test]
    fn tbf_roundtrip_and_errors() {
        let f = Frame::new(3, 3, 20.0, vec![7.5; 9]).unwrap();
        let bytes = encode_tbf(&f).unwrap();
        assert_eq!(bytes.len(), 20 + 36);
        let g = decode_tbf(&bytes, Path::new("mem")).unwrap();
        assert_eq!(g, f);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_tbf(&bad, Path::new("mem")),
            Err(Error::Format { .. })
        ));
        assert!(decode_tbf(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(decode_tbf(&bytes[..10], Path::new("mem")).is_err());

        let mut huge = bytes[..20].to_vec();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_tbf(&huge, Path::new("mem")).is_err());
    }

    #[test]
    fn full_sensor_roundtrip_on_disk() {
        let data: Vec<f32> = (0..1340 * 400)
            .map(|i| (i as f32) * 0.25 - 1000.0)
            .collect();
        let f = Frame::new(1340, 400, 20.0, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sensor.tbf");
        write_frame(&f, &path).unwrap();
        assert_eq!(read_frame(&path).unwrap(), f);
    }

    #[test]
    fn flat_field_divides() {
        let f = Frame::new(2, 1, 20.0, vec![10.0, 20.0]).unwrap();
        let g = Frame::new(2, 1, 20.0, vec![0.5, 2.0]).unwrap();
        assert_eq!(flat_field(&f, &g).unwrap().data(), &[20.0, 10.0]);
        let m = block_mean(&Frame::new(2, 2, 20.0, vec![1., 2., 3., 6.]).unwrap(), 2).unwrap();
        assert_eq!(m.data(), &[3.0]);
    }

    fn integer_frame(max_side: usize) -> impl Strategy<Value = Frame> {
        (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
            prop::collection::vec(0u32..5000, w * h).prop_map(move |v| {
                Frame::photon_counts(w, h, 20.0, v.into_iter().map(|x| x as f32).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn binning_preserves_total(f in integer_frame(24), factor in 1usize..5) {
            prop_assume!(factor <= f.width() && factor <= f.height());
            let b = bin_frame(&f, BinMode::software(factor), true).unwrap();
            let kept = extract_region(
                &f,
                Region::new(0, 0, b.width() * factor, b.height() * factor),
            ).unwrap();
            prop_assert_eq!(b.total(), kept.total());
        }

        #[test]
        fn binning_composes(a in 1usize..4, b in 1usize..4, w in 1usize..4, h in 1usize..4,
                            seed in any::<u64>()) {
            let (fw, fh) = (w * a * b, h * a * b);
            let data: Vec<f32> = (0..fw * fh)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32)
                .collect();
            let f = Frame::photon_counts(fw, fh, 20.0, data).unwrap();
            let twice = bin_frame(&bin_frame(&f, BinMode::software(a), false).unwrap(),
                                  BinMode::software(b), false).unwrap();
            let once = bin_frame(&f, BinMode::software(a * b), false).unwrap();
            prop_assert_eq!(twice, once);
        }

        #[test]
        fn tbf_roundtrip_any_finite(w in 1usize..9, h in 1usize..9,
                                    vals in prop::collection::vec(-1e6f32..1e6, 64),
                                    pitch in 0.1f64..500.0) {
            let data: Vec<f32> = (0..w * h).map(|i| vals[i % vals.len()]).collect();
            let f = Frame::new(w, h, pitch, data).unwrap();
            let g = decode_tbf(&encode_tbf(&f).unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(
                f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(f.pixel_pitch().to_bits(), g.pixel_pitch().to_bits());
        }
    }
}
