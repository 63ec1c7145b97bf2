//! Lateral votes between learning modules that share a model frame.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::cmp::{Vote, VotePacket};
use crate::geometry::{Rotation, Vec3};
use crate::learning_module::{HypothesisSpace, LmConfig, ObjectHypotheses, SpatialIndex};

/// The top `top_fraction` of hypotheses by evidence, rescaled so the
/// lowest evidence in the space maps to −1 and the highest to 1.
pub fn emit_vote(space: &HypothesisSpace, sender_id: &str, sensed_location: &Vec3, top_fraction: f64) -> VotePacket {
    let all: Vec<(usize, usize, f64)> = space
        .objects
        .iter()
        .enumerate()
        .flat_map(|(o, h)| h.evidences.iter().enumerate().map(move |(i, &e)| (o, i, e)))
        .collect();
    let lo = all.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
    let scale = |e: f64| {
        if hi > lo {
            (2.0 * (e - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    };
    let keep = ((all.len() as f64 * top_fraction.clamp(0.0, 1.0)).ceil() as usize).min(all.len());
    let mut ranked = all;
    // Stable: equal evidence keeps (object, index) order.
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2));
    let votes = ranked[..keep]
        .iter()
        .map(|&(o, i, e)| {
            let h = &space.objects[o];
            Vote {
                object_id: h.object_id.clone(),
                location: h.locations[i],
                rotation: h.rotations[i],
                evidence: scale(e),
            }
        })
        .collect();
    VotePacket {
        sender_id: sender_id.into(),
        sender_sensed_location: *sensed_location,
        votes,
    }
}

/// Moves each vote by the sensor offset between sender and receiver,
/// expressed in the vote's model frame.
pub fn transform_votes(packet: &VotePacket, receiver_sensed_location: &Vec3) -> Vec<Vote> {
    let delta = receiver_sensed_location - packet.sender_sensed_location;
    packet
        .votes
        .iter()
        .map(|v| Vote {
            location: v.location + v.rotation.apply_inverse(&delta),
            ..v.clone()
        })
        .collect()
}

fn vote_delta(votes: &[&Vote], index: &SpatialIndex, loc: &Vec3, rot: &Rotation, config: &LmConfig, scratch: &mut Vec<usize>) -> f64 {
    let max_angle = config.vote_angle_deg.to_radians();
    index.within(|i| votes[i].location, loc, config.vote_radius, scratch);
    let (mut num, mut den) = (0.0, 0.0);
    for &i in scratch.iter() {
        let v = votes[i];
        if v.rotation.geodesic_distance(rot) > max_angle {
            continue;
        }
        let w = 1.0 - (v.location - loc).norm() / config.vote_radius;
        num += w * v.evidence;
        den += w;
    }
    if den > 0.0 {
        (num / den).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

fn integrate_object(h: &mut ObjectHypotheses, votes: &[&Vote], config: &LmConfig) {
    if votes.is_empty() {
        return;
    }
    let index = SpatialIndex::build(votes.iter().map(|v| v.location));
    #[cfg(feature = "parallel")]
    {
        h.evidences
            .par_iter_mut()
            .zip(h.locations.par_iter())
            .zip(h.rotations.par_iter())
            .with_min_len(256)
            .for_each_init(Vec::new, |scratch, ((ev, loc), rot)| {
                *ev += vote_delta(votes, &index, loc, rot, config, scratch)
            });
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut scratch = Vec::new();
        for ((ev, loc), rot) in h.evidences.iter_mut().zip(&h.locations).zip(&h.rotations) {
            *ev += vote_delta(votes, &index, loc, rot, config, &mut scratch);
        }
    }
}

/// Adds to each hypothesis the distance-weighted mean of the votes for the
/// same object near its location and rotation; nothing when none qualify.
pub fn integrate_votes(space: &mut HypothesisSpace, votes: &[Vote], config: &LmConfig) {
    for h in &mut space.objects {
        let mine: Vec<&Vote> = votes.iter().filter(|v| v.object_id == h.object_id).collect();
        integrate_object(h, &mine, config);
    }
}
