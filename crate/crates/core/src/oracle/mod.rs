//! The segmentation-model boundary.
//!
//! Anything that maps an [`Image`] to a [`LabelMap`] can drive the search:
//! the built-in [`PaletteSegmenter`] for local runs and tests, or an external
//! model reached through [`RemoteOracle`] and the [`wire`] protocol.

pub mod remote;
pub mod wire;

use std::io::{Read, Write};
use std::time::Duration;

use thiserror::Error;

use crate::imaging::{Image, LabelMap};

pub use remote::{Endpoint, RemoteOracle};
pub use wire::{Frame, ProtocolError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle requires a 3-channel image, got {0} channels")]
    ChannelMismatch(usize),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("oracle reported an error: {0}")]
    Remote(String),
    #[error("oracle did not answer within {0:?}")]
    Timeout(Duration),
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("oracle returned {got_h}x{got_w} labels for a {want_h}x{want_w} image")]
    ShapeMismatch {
        want_h: usize,
        want_w: usize,
        got_h: usize,
        got_w: usize,
    },
}

/// A deterministic segmentation model.
pub trait SegmentationOracle: Send + Sync {
    fn segment(&self, img: &Image) -> Result<LabelMap, OracleError>;

    /// Identifier recorded in run manifests.
    fn descriptor(&self) -> String;
}

impl<T: SegmentationOracle + ?Sized> SegmentationOracle for Box<T> {
    fn segment(&self, img: &Image) -> Result<LabelMap, OracleError> {
        (**self).segment(img)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<T: SegmentationOracle + ?Sized> SegmentationOracle for std::sync::Arc<T> {
    fn segment(&self, img: &Image) -> Result<LabelMap, OracleError> {
        (**self).segment(img)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PaletteError {
    #[error("palette needs at least 2 centroids, got {0}")]
    TooFew(usize),
    #[error("duplicate class index {0}")]
    DuplicateClass(u16),
}

/// Nearest-centroid color classifier.
///
/// Each pixel gets the class whose reference color is nearest in squared
/// Euclidean RGB distance; ties go to the lowest class index.
#[derive(Debug, Clone, PartialEq)]
pub struct PaletteSegmenter {
    /// Sorted by class index.
    centroids: Vec<(u16, [u8; 3])>,
}

impl PaletteSegmenter {
    pub fn new(mut centroids: Vec<(u16, [u8; 3])>) -> Result<Self, PaletteError> {
        if centroids.len() < 2 {
            return Err(PaletteError::TooFew(centroids.len()));
        }
        centroids.sort_by_key(|c| c.0);
        if let Some(w) = centroids.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(PaletteError::DuplicateClass(w[0].0));
        }
        Ok(Self { centroids })
    }

    /// Eight-class palette used for the synthetic corpora.
    ///
    /// Neighboring colors sit roughly 60-90 units apart so moderate noise
    /// can flip pixels, and the palette spans near-black to near-white so
    /// impulse noise lands on classes absent from a typical scene.
    pub fn reference() -> Self {
        Self::new(vec![
            (0, [40, 40, 40]),
            (1, [128, 64, 128]),
            (2, [70, 130, 70]),
            (3, [70, 110, 180]),
            (4, [200, 80, 60]),
            (5, [200, 190, 80]),
            (6, [150, 150, 150]),
            (7, [225, 225, 225]),
        ])
        .expect("reference palette is valid")
    }

    pub fn centroids(&self) -> &[(u16, [u8; 3])] {
        &self.centroids
    }

    pub fn color_of(&self, class: u16) -> Option<[u8; 3]> {
        self.centroids.iter().find(|c| c.0 == class).map(|c| c.1)
    }

    fn classify(&self, px: &[u8]) -> u16 {
        let mut best = (u32::MAX, 0u16);
        for &(class, color) in &self.centroids {
            let d: u32 = px
                .iter()
                .zip(color)
                .map(|(&a, b)| {
                    let d = a.abs_diff(b) as u32;
                    d * d
                })
                .sum();
            // centroids are sorted, so strict < keeps the lowest class on ties
            if d < best.0 {
                best = (d, class);
            }
        }
        best.1
    }

    pub fn segment_image(&self, img: &Image) -> Result<LabelMap, OracleError> {
        if img.channels() != 3 {
            return Err(OracleError::ChannelMismatch(img.channels()));
        }
        let labels = img.samples().chunks_exact(3).map(|px| self.classify(px)).collect();
        Ok(LabelMap::new(img.height(), img.width(), labels).expect("shape preserved"))
    }
}

impl SegmentationOracle for PaletteSegmenter {
    fn segment(&self, img: &Image) -> Result<LabelMap, OracleError> {
        self.segment_image(img)
    }

    fn descriptor(&self) -> String {
        let parts: Vec<String> = self
            .centroids
            .iter()
            .map(|(c, [r, g, b])| format!("{c}:{r},{g},{b}"))
            .collect();
        format!("builtin-palette[{}]", parts.join(";"))
    }
}

/// Serves requests from `input` until the peer closes.
///
/// Model failures become error frames and the loop continues. A framing
/// error also gets an error frame, after which the connection is closed
/// because the stream can no longer be resynchronized.
pub fn serve_connection<R, W, O>(input: &mut R, output: &mut W, oracle: &O) -> std::io::Result<()>
where
    R: Read,
    W: Write,
    O: SegmentationOracle + ?Sized,
{
    loop {
        let frame = match wire::read_frame(input) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(wire::FrameReadError::Io(e)) => return Err(e),
            Err(wire::FrameReadError::Protocol(e)) => {
                Frame::Error(format!("protocol error: {e}")).write_to(output)?;
                return Ok(());
            }
        };
        let reply = match frame {
            Frame::Request(img) => match oracle.segment(&img) {
                Ok(map) => Frame::Response(map),
                Err(e) => Frame::Error(e.to_string()),
            },
            other => Frame::Error(format!("expected a segment request, got {}", frame_name(&other))),
        };
        reply.write_to(output)?;
    }
}

fn frame_name(f: &Frame) -> &'static str {
    match f {
        Frame::Request(_) => "request",
        Frame::Response(_) => "response",
        Frame::Error(_) => "error",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(px: &[[u8; 3]]) -> Image {
        Image::new(1, px.len(), 3, px.concat()).unwrap()
    }

    #[test]
    fn palette_examples() {
        let p = PaletteSegmenter::new(vec![(0, [0, 0, 0]), (1, [255, 255, 255])]).unwrap();
        let out = p.segment_image(&rgb(&[[0, 0, 0], [255, 255, 255], [100, 100, 100]])).unwrap();
        assert_eq!(out.labels(), &[0, 1, 0]);

        let tie = PaletteSegmenter::new(vec![(5, [10, 0, 0]), (2, [0, 0, 0])]).unwrap();
        assert_eq!(tie.segment_image(&rgb(&[[5, 0, 0]])).unwrap().labels(), &[2]);

        let gray = Image::new(1, 1, 1, vec![0]).unwrap();
        assert_eq!(p.segment_image(&gray), Err(OracleError::ChannelMismatch(1)));
    }

    #[test]
    fn palette_construction_rules() {
        assert_eq!(PaletteSegmenter::new(vec![(0, [0; 3])]), Err(PaletteError::TooFew(1)));
        assert_eq!(
            PaletteSegmenter::new(vec![(1, [0; 3]), (1, [9; 3])]),
            Err(PaletteError::DuplicateClass(1))
        );
        let r = PaletteSegmenter::reference();
        for &(class, color) in r.centroids() {
            assert_eq!(r.segment_image(&rgb(&[color])).unwrap().labels(), &[class]);
        }
        assert!(r.descriptor().starts_with("builtin-palette["));
    }

    #[test]
    fn serve_loop_answers_and_survives_model_errors() {
        let p = PaletteSegmenter::reference();
        let mut input = Vec::new();
        input.extend(Frame::Request(rgb(&[[40, 40, 40], [225, 225, 225]])).encode());
        input.extend(Frame::Request(Image::new(1, 1, 1, vec![0]).unwrap()).encode());
        input.extend(Frame::Request(rgb(&[[200, 80, 60]])).encode());
        let mut output = Vec::new();
        serve_connection(&mut &input[..], &mut output, &p).unwrap();

        let mut cursor = &output[..];
        let first = wire::read_frame(&mut cursor).unwrap().unwrap();
        assert_eq!(first, Frame::Response(LabelMap::new(1, 2, vec![0, 7]).unwrap()));
        assert!(matches!(wire::read_frame(&mut cursor).unwrap(), Some(Frame::Error(m)) if m.contains("3-channel")));
        assert_eq!(
            wire::read_frame(&mut cursor).unwrap(),
            Some(Frame::Response(LabelMap::new(1, 1, vec![4]).unwrap()))
        );
        assert_eq!(wire::read_frame(&mut cursor).unwrap(), None);
    }

    #[test]
    fn serve_loop_reports_framing_errors() {
        let p = PaletteSegmenter::reference();
        let mut output = Vec::new();
        serve_connection(&mut &b"garbage-garbage-garbage"[..], &mut output, &p).unwrap();
        assert!(matches!(Frame::decode(&output), Ok(Frame::Error(m)) if m.contains("protocol error")));
    }
}
