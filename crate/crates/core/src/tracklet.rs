//! Feature tracklets: per-frame stereo observations of one point.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::camera::{StereoIntrinsics, StereoObservation};
use crate::se3::Vec3;

pub type TrackletId = u32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameObservation {
    pub stereo: StereoObservation,
    /// Back-projection of `stereo` in the observing camera frame.
    pub point: Vec3,
}

/// Observations of a single feature over a contiguous frame range, with
/// gaps allowed inside the range. The first and last stored frames are
/// always observed.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracklet {
    pub id: TrackletId,
    first_frame: usize,
    obs: Vec<Option<FrameObservation>>,
}

impl Tracklet {
    /// Builds a tracklet, trimming unobserved frames at both ends.
    /// Returns `None` when nothing is observed.
    pub fn new(
        id: TrackletId,
        first_frame: usize,
        mut obs: Vec<Option<FrameObservation>>,
    ) -> Option<Self> {
        let lead = obs.iter().position(Option::is_some)?;
        let last = obs.iter().rposition(Option::is_some)?;
        obs.truncate(last + 1);
        obs.drain(..lead);
        Some(Self {
            id,
            first_frame: first_frame + lead,
            obs,
        })
    }

    pub fn first_frame(&self) -> usize {
        self.first_frame
    }

    pub fn last_frame(&self) -> usize {
        self.first_frame + self.obs.len() - 1
    }

    pub fn at(&self, frame: usize) -> Option<&FrameObservation> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|i| self.obs.get(i))
            .and_then(Option::as_ref)
    }

    pub fn observed(&self, frame: usize) -> bool {
        self.at(frame).is_some()
    }

    pub fn observations(&self) -> impl Iterator<Item = (usize, &FrameObservation)> + '_ {
        self.obs
            .iter()
            .enumerate()
            .filter_map(move |(i, o)| o.as_ref().map(|o| (self.first_frame + i, o)))
    }

    pub fn observation_count(&self) -> usize {
        self.obs.iter().filter(|o| o.is_some()).count()
    }

    /// Frames `k` with observations at both `k − 1` and `k`.
    pub fn consecutive_pairs(&self) -> impl Iterator<Item = usize> + '_ {
        (self.first_frame + 1..=self.last_frame())
            .filter(move |&k| self.observed(k) && self.observed(k - 1))
    }

    /// Restricts the tracklet to frames `[start, start + len)` and shifts
    /// frame numbers so that `start` becomes frame 0.
    pub fn window(&self, start: usize, len: usize) -> Option<Tracklet> {
        let end = start + len;
        if self.last_frame() < start || self.first_frame >= end {
            return None;
        }
        let obs = (start.max(self.first_frame)..end.min(self.last_frame() + 1))
            .map(|k| self.at(k).copied())
            .collect();
        Tracklet::new(self.id, start.max(self.first_frame) - start, obs)
    }
}

#[derive(Serialize, Deserialize)]
struct TrackletRecord {
    id: TrackletId,
    first_frame: usize,
    obs: Vec<Option<[f64; 3]>>,
}

/// Writes one JSON object per line: `{id, first_frame, obs}`.
pub fn write_jsonl<W: Write>(mut w: W, tracklets: &[Tracklet]) -> std::io::Result<()> {
    for t in tracklets {
        let record = TrackletRecord {
            id: t.id,
            first_frame: t.first_frame,
            obs: t
                .obs
                .iter()
                .map(|o| o.map(|o| [o.stereo.u, o.stereo.v, o.stereo.d]))
                .collect(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads tracklets written by [`write_jsonl`] (or any external front-end),
/// back-projecting every observation. Observations whose disparity does not
/// exceed `min_disparity` are treated as missing.
pub fn read_jsonl<R: BufRead>(
    r: R,
    intrinsics: &StereoIntrinsics,
    min_disparity: f64,
) -> Result<Vec<Tracklet>, serde_json::Error> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrackletRecord = serde_json::from_str(&line)?;
        let obs = record
            .obs
            .iter()
            .map(|o| {
                o.and_then(|[u, v, d]| {
                    let stereo = StereoObservation::new(u, v, d);
                    intrinsics
                        .backproject(&stereo, min_disparity)
                        .ok()
                        .map(|point| FrameObservation { stereo, point })
                })
            })
            .collect();
        if let Some(t) = Tracklet::new(record.id, record.first_frame, obs) {
            out.push(t);
        }
    }
    out.sort_by_key(|t| t.id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(u: f64) -> Option<FrameObservation> {
        Some(FrameObservation {
            stereo: StereoObservation::new(u, 10.0, 20.0),
            point: Vec3::new(u, 0.0, 1.0),
        })
    }

    #[test]
    fn trims_and_indexes() {
        let t = Tracklet::new(3, 2, vec![None, obs(1.0), None, obs(2.0), obs(3.0), None]).unwrap();
        assert_eq!(t.first_frame(), 3);
        assert_eq!(t.last_frame(), 6);
        assert!(t.observed(3) && !t.observed(4));
        assert_eq!(t.consecutive_pairs().collect::<Vec<_>>(), vec![6]);
        assert_eq!(t.observation_count(), 3);
        assert!(Tracklet::new(0, 0, vec![None, None]).is_none());
    }

    #[test]
    fn window_shifts_frames() {
        let t = Tracklet::new(1, 0, vec![obs(0.0), obs(1.0), obs(2.0), obs(3.0)]).unwrap();
        let w = t.window(2, 5).unwrap();
        assert_eq!(w.first_frame(), 0);
        assert_eq!(w.last_frame(), 1);
        assert_eq!(w.at(1).unwrap().stereo.u, 3.0);
        assert!(t.window(4, 2).is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let k = StereoIntrinsics::default();
        let mk = |u: f64, d: f64| {
            let stereo = StereoObservation::new(u, 200.0, d);
            Some(FrameObservation {
                stereo,
                point: k.backproject(&stereo, 0.5).unwrap(),
            })
        };
        let ts = vec![
            Tracklet::new(7, 4, vec![mk(100.0, 12.0), None, mk(101.5, 12.5)]).unwrap(),
            Tracklet::new(2, 0, vec![mk(50.0, 30.0)]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &ts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"obs\":[[100.0,200.0,12.0],null,[101.5,200.0,12.5]]"));
        let back = read_jsonl(buf.as_slice(), &k, 0.5).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, 2);
        assert_eq!(back[1], ts[0]);
    }
}
