//! MPEG4-style video source model: I/P/B frame structure, fixed-size
//! packetization, loss classification, and synthetic luminance frames.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::LumaFrame;
use crate::packet::{FrameClass, FrameRef};
use crate::time::{SimDuration, SimTime};

/// One frame in the emission schedule.
#[derive(Debug, Clone)]
pub struct VideoFrame {
    pub index: u32,
    pub class: FrameClass,
    pub size_bytes: u32,
    pub packet_count: u32,
    pub emit_at: SimTime,
}

/// One packet in the emission schedule.
#[derive(Debug, Clone, Copy)]
pub struct VideoPacket {
    pub send_at: SimTime,
    pub frame: FrameRef,
    pub size_bytes: u32,
}

/// Full schedule of a video flow: frames at `1/fps` spacing, each fragmented
/// into fixed-size packets sent at the flow's packet interval.
#[derive(Debug, Clone)]
pub struct VideoSchedule {
    pub frames: Vec<VideoFrame>,
    pub packets: Vec<VideoPacket>,
    pub gop_len: u32,
    pub strict_b_refs: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VideoError {
    #[error("GOP pattern must not be empty")]
    EmptyPattern,
    #[error("GOP pattern must start with an I frame, got '{0}'")]
    PatternMustStartWithI(char),
    #[error("GOP pattern contains '{0}', expected only I, P, or B")]
    BadPatternChar(char),
    #[error("fps must be positive")]
    BadFps,
}

pub fn parse_gop(pattern: &str) -> Result<Vec<FrameClass>, VideoError> {
    if pattern.is_empty() {
        return Err(VideoError::EmptyPattern);
    }
    let classes: Vec<FrameClass> = pattern
        .chars()
        .map(|c| match c {
            'I' => Ok(FrameClass::I),
            'P' => Ok(FrameClass::P),
            'B' => Ok(FrameClass::B),
            other => Err(VideoError::BadPatternChar(other)),
        })
        .collect::<Result<_, _>>()?;
    if classes[0] != FrameClass::I {
        return Err(VideoError::PatternMustStartWithI(
            pattern.chars().next().unwrap(),
        ));
    }
    Ok(classes)
}

/// Builds the frame/packet schedule. Frames are emitted at `1/fps` spacing
/// starting at `start`; each is fragmented into `ceil(size / packet_bytes)`
/// packets spaced by `packet_interval` and tagged with the frame reference.
#[allow(clippy::too_many_arguments)]
pub fn video_generate(
    pattern: &str,
    size_of: impl Fn(FrameClass) -> u32,
    fps: u32,
    frame_count: u32,
    packet_bytes: u32,
    packet_interval: SimDuration,
    start: SimTime,
    strict_b_refs: bool,
) -> Result<VideoSchedule, VideoError> {
    let classes = parse_gop(pattern)?;
    if fps == 0 {
        return Err(VideoError::BadFps);
    }
    let mut frames = Vec::with_capacity(frame_count as usize);
    let mut packets = Vec::new();
    for index in 0..frame_count {
        let class = classes[index as usize % classes.len()];
        let size = size_of(class);
        let packet_count = size.div_ceil(packet_bytes);
        let emit_at =
            start + SimDuration::from_us((index as u64 * 1_000_000 + fps as u64 / 2) / fps as u64);
        for k in 0..packet_count {
            packets.push(VideoPacket {
                send_at: emit_at + packet_interval * k as u64,
                frame: FrameRef { index, class },
                size_bytes: packet_bytes,
            });
        }
        frames.push(VideoFrame {
            index,
            class,
            size_bytes: size,
            packet_count,
            emit_at,
        });
    }
    Ok(VideoSchedule {
        frames,
        packets,
        gop_len: classes.len() as u32,
        strict_b_refs,
    })
}

/// Per-class packet and frame loss counts, in the four classes A (all),
/// I, P, and B.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossReport {
    pub packets_sent: [u64; 4],
    pub packets_lost: [u64; 4],
    pub frames_sent: [u64; 4],
    pub frames_lost: [u64; 4],
}

pub const CLASS_ALL: usize = 0;
pub const CLASS_I: usize = 1;
pub const CLASS_P: usize = 2;
pub const CLASS_B: usize = 3;

fn class_slot(c: FrameClass) -> usize {
    match c {
        FrameClass::I => CLASS_I,
        FrameClass::P => CLASS_P,
        FrameClass::B => CLASS_B,
    }
}

/// Decodability under the reference rules: a frame is decodable iff every one
/// of its packets was delivered and its reference frames are decodable.
/// I frames stand alone; P frames reference the previous decodable-required
/// I/P; B frames reference the nearest preceding I/P (and, when
/// `strict_b_refs` is set, also the following I/P anchor).
pub fn decodable_frames(schedule: &VideoSchedule, delivered_per_frame: &[u32]) -> Vec<bool> {
    let n = schedule.frames.len();
    let mut decodable = vec![false; n];
    let mut last_anchor_decodable = false;
    // Forward pass for I/P chains and B's preceding anchor.
    let mut preceding_anchor_ok = vec![false; n];
    for (i, f) in schedule.frames.iter().enumerate() {
        let complete = delivered_per_frame[i] >= f.packet_count;
        match f.class {
            FrameClass::I => {
                decodable[i] = complete;
                last_anchor_decodable = decodable[i];
            }
            FrameClass::P => {
                decodable[i] = complete && last_anchor_decodable;
                last_anchor_decodable = decodable[i];
            }
            FrameClass::B => {
                preceding_anchor_ok[i] = last_anchor_decodable;
                decodable[i] = complete && last_anchor_decodable;
            }
        }
    }
    if schedule.strict_b_refs {
        // Backward pass: B frames additionally need the next anchor.
        let mut next_anchor_decodable = false;
        for (i, f) in schedule.frames.iter().enumerate().rev() {
            match f.class {
                FrameClass::I | FrameClass::P => next_anchor_decodable = decodable[i],
                FrameClass::B => decodable[i] = decodable[i] && next_anchor_decodable,
            }
        }
    }
    decodable
}

/// Classifies packet and frame losses for a completed run. A frame counts as
/// lost when it is undecodable, whether through its own packet loss or a
/// broken reference chain.
pub fn classify_losses(schedule: &VideoSchedule, delivered_per_frame: &[u32]) -> LossReport {
    let decodable = decodable_frames(schedule, delivered_per_frame);
    let mut report = LossReport::default();
    for (i, f) in schedule.frames.iter().enumerate() {
        let slot = class_slot(f.class);
        let sent = f.packet_count as u64;
        let lost = (f.packet_count - delivered_per_frame[i].min(f.packet_count)) as u64;
        for s in [CLASS_ALL, slot] {
            report.packets_sent[s] += sent;
            report.packets_lost[s] += lost;
            report.frames_sent[s] += 1;
            if !decodable[i] {
                report.frames_lost[s] += 1;
            }
        }
    }
    report
}

/// Renders the loss report in the fixed four-line layout consumed by the
/// text report.
pub fn format_loss_report(r: &LossReport) -> String {
    format!(
        "Packet sent:p->nA:{}, p->nI:{}, p->nP:{}, p->nB:{}\n \
         Packet lost:p->lA:{}, p->lI:{}, p->lP:{}, p->lB:{}\n\n\
         Frame sent:f->nA:{}, f->nI:{}, f->nP:{}, f->nB:{}\n \
         Frame lost:f->lA:{}, f->lI:{}, f->lP:{}, f->lB:{}\n",
        r.packets_sent[CLASS_ALL],
        r.packets_sent[CLASS_I],
        r.packets_sent[CLASS_P],
        r.packets_sent[CLASS_B],
        r.packets_lost[CLASS_ALL],
        r.packets_lost[CLASS_I],
        r.packets_lost[CLASS_P],
        r.packets_lost[CLASS_B],
        r.frames_sent[CLASS_ALL],
        r.frames_sent[CLASS_I],
        r.frames_sent[CLASS_P],
        r.frames_sent[CLASS_B],
        r.frames_lost[CLASS_ALL],
        r.frames_lost[CLASS_I],
        r.frames_lost[CLASS_P],
        r.frames_lost[CLASS_B],
    )
}

/// Deterministic per-frame pseudo-random luminance matrices. The source
/// video file is a scenario input we do not ship; PSNR only needs pixel
/// matrices, so each frame is filled from a stream cipher keyed by
/// `(seed, frame index)`.
pub fn synthetic_frames(seed: u64, count: u32, width: u32, height: u32) -> Vec<LumaFrame> {
    (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((index as u64) << 32 | 0x9e37_79b9));
            let mut pixels = vec![0u8; (width * height) as usize];
            rng.fill_bytes(&mut pixels);
            LumaFrame {
                width,
                height,
                pixels,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOP: &str = "IBBPBBPBBPBB";

    fn sizes(c: FrameClass) -> u32 {
        match c {
            FrameClass::I => 8192,
            FrameClass::P => 3072,
            FrameClass::B => 1024,
        }
    }

    fn schedule_300() -> VideoSchedule {
        video_generate(
            GOP,
            sizes,
            30,
            300,
            1028,
            SimDuration::from_ms_f64(1.0),
            SimTime::ZERO,
            false,
        )
        .unwrap()
    }

    #[test]
    fn frame_counts_follow_pattern_multiplicities() {
        let s = schedule_300();
        assert_eq!(s.frames.len(), 300);
        let count = |c| s.frames.iter().filter(|f| f.class == c).count();
        // 25 full GOPs of IBBPBBPBBPBB: 1 I, 3 P, 8 B each.
        assert_eq!(count(FrameClass::I), 25);
        assert_eq!(count(FrameClass::P), 75);
        assert_eq!(count(FrameClass::B), 200);
    }

    #[test]
    fn i_frame_fragments_into_ceiling_packets() {
        let s = schedule_300();
        assert_eq!(s.frames[0].packet_count, 8); // ceil(8192/1028)
        assert_eq!(s.frames[1].packet_count, 1); // ceil(1024/1028)
        assert_eq!(s.frames[3].packet_count, 3); // ceil(3072/1028)
    }

    #[test]
    fn empty_pattern_is_rejected() {
        assert_eq!(parse_gop(""), Err(VideoError::EmptyPattern));
        assert!(matches!(
            parse_gop("BIP"),
            Err(VideoError::PatternMustStartWithI('B'))
        ));
    }

    #[test]
    fn all_delivered_means_no_loss() {
        let s = schedule_300();
        let delivered: Vec<u32> = s.frames.iter().map(|f| f.packet_count).collect();
        let r = classify_losses(&s, &delivered);
        assert_eq!(r.packets_lost, [0; 4]);
        assert_eq!(r.frames_lost, [0; 4]);
        assert_eq!(
            r.packets_sent[CLASS_ALL],
            r.packets_sent[CLASS_I] + r.packets_sent[CLASS_P] + r.packets_sent[CLASS_B]
        );
    }

    #[test]
    fn lost_b_packet_affects_only_that_frame() {
        let s = schedule_300();
        let mut delivered: Vec<u32> = s.frames.iter().map(|f| f.packet_count).collect();
        delivered[1] = 0; // first B frame
        let r = classify_losses(&s, &delivered);
        assert_eq!(r.frames_lost[CLASS_ALL], 1);
        assert_eq!(r.frames_lost[CLASS_B], 1);
    }

    #[test]
    fn lost_i_packet_breaks_the_whole_gop() {
        let s = schedule_300();
        let mut delivered: Vec<u32> = s.frames.iter().map(|f| f.packet_count).collect();
        delivered[12] = s.frames[12].packet_count - 1; // second GOP's I frame
        let r = classify_losses(&s, &delivered);
        // Every frame of that GOP depends on its I frame.
        assert_eq!(r.frames_lost[CLASS_ALL], 12);
        assert_eq!(r.frames_lost[CLASS_I], 1);
        assert_eq!(r.frames_lost[CLASS_P], 3);
        assert_eq!(r.frames_lost[CLASS_B], 8);
    }

    /// Brute-force dependency oracle: recompute decodability by explicitly
    /// walking each frame's reference set, independent of the incremental
    /// pass in `decodable_frames`.
    fn oracle_decodable(s: &VideoSchedule, delivered: &[u32]) -> Vec<bool> {
        fn anchor_before(s: &VideoSchedule, i: usize) -> Option<usize> {
            (0..i)
                .rev()
                .find(|j| s.frames[*j].class != FrameClass::B)
        }
        fn anchor_after(s: &VideoSchedule, i: usize) -> Option<usize> {
            (i + 1..s.frames.len()).find(|j| s.frames[*j].class != FrameClass::B)
        }
        fn solve(
            s: &VideoSchedule,
            delivered: &[u32],
            i: usize,
            memo: &mut Vec<Option<bool>>,
        ) -> bool {
            if let Some(v) = memo[i] {
                return v;
            }
            memo[i] = Some(false); // break cycles defensively; DAG has none
            let complete = delivered[i] >= s.frames[i].packet_count;
            let ok = complete
                && match s.frames[i].class {
                    FrameClass::I => true,
                    FrameClass::P => anchor_before(s, i)
                        .map(|j| solve(s, delivered, j, memo))
                        .unwrap_or(false),
                    FrameClass::B => {
                        let prev = anchor_before(s, i)
                            .map(|j| solve(s, delivered, j, memo))
                            .unwrap_or(false);
                        let next = if s.strict_b_refs {
                            anchor_after(s, i)
                                .map(|j| solve(s, delivered, j, memo))
                                .unwrap_or(false)
                        } else {
                            true
                        };
                        prev && next
                    }
                };
            memo[i] = Some(ok);
            ok
        }
        let mut memo = vec![None; s.frames.len()];
        (0..s.frames.len())
            .map(|i| solve(s, delivered, i, &mut memo))
            .collect()
    }

    #[test]
    fn decodability_matches_brute_force_oracle() {
        for strict in [false, true] {
            let s = video_generate(
                GOP,
                sizes,
                30,
                120,
                1028,
                SimDuration::from_ms_f64(1.0),
                SimTime::ZERO,
                strict,
            )
            .unwrap();
            // Deterministic pseudo-random loss pattern.
            let mut state = 0x2545F4914F6CDD1Du64;
            let delivered: Vec<u32> = s
                .frames
                .iter()
                .map(|f| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    if state >> 60 < 3 {
                        (state >> 32) as u32 % (f.packet_count + 1)
                    } else {
                        f.packet_count
                    }
                })
                .collect();
            assert_eq!(
                decodable_frames(&s, &delivered),
                oracle_decodable(&s, &delivered),
                "strict={strict}"
            );
        }
    }

    #[test]
    fn adding_delivered_packets_never_hurts() {
        let s = schedule_300();
        let mut delivered: Vec<u32> = s
            .frames
            .iter()
            .map(|f| f.packet_count.saturating_sub(1))
            .collect();
        let before = decodable_frames(&s, &delivered);
        for d in delivered.iter_mut() {
            *d += 1;
        }
        let after = decodable_frames(&s, &delivered);
        for (b, a) in before.iter().zip(after.iter()) {
            assert!(!b || *a);
        }
    }

    #[test]
    fn report_layout_is_stable() {
        let r = LossReport {
            packets_sent: [4651, 1106, 1459, 2085],
            packets_lost: [108, 40, 25, 43],
            frames_sent: [1331, 148, 296, 886],
            frames_lost: [38, 5, 8, 25],
        };
        let text = format_loss_report(&r);
        let expect = "Packet sent:p->nA:4651, p->nI:1106, p->nP:1459, p->nB:2085\n \
                      Packet lost:p->lA:108, p->lI:40, p->lP:25, p->lB:43\n\n\
                      Frame sent:f->nA:1331, f->nI:148, f->nP:296, f->nB:886\n \
                      Frame lost:f->lA:38, f->lI:5, f->lP:8, f->lB:25\n";
        assert_eq!(text, expect);
    }

    #[test]
    fn synthetic_frames_are_deterministic() {
        let a = synthetic_frames(7, 3, 16, 16);
        let b = synthetic_frames(7, 3, 16, 16);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
