#pragma once

#include <vector>

#include "retarget/morphology.h"
#include "retarget/motion_clip.h"
#include "retarget/trainer.h"

// Small planar characters and scripted clips for demos, integration tests
// and the end-to-end runs. All joints pitch about the body y axis, so limbs
// stay in separate lateral planes.
namespace retarget::toy {

// torso (root) + two single-link legs + upper arm + forearm. Root 0.9 m.
Morphology source_morphology();

// torso (root) + two legs + single-link arm. Root 0.55 m, about 6.5 kg.
Morphology target_morphology();

// torso/torso (root), legs, forearm/arm (swing about the arm axis).
std::vector<CorrespondencePair> correspondences();

// Scripted source clips at 50 Hz with finite-difference velocities:
// "walk" (compass gait), "sway" (planted feet, one-frame 6 cm dip artifact),
// "wave" (standing arm wave).
std::vector<MotionClip> source_clips(double seconds = 4.0);

MotionClip make_clip(const Morphology& morph, const char* id, double fps, int frames,
                     const std::vector<Frame>& roots, const std::vector<VecX>& joint_angles);

// Desk-scale training settings for the toy problem: 64 envs, 300
// iterations, eta = 1e-4 annealed as 1 / (1 + iteration / 100).
TrainerConfig trainer_config();

Mat3 capsule_inertia(double mass, double radius, double length);
Mat3 sphere_inertia(double mass, double radius);

}  // namespace retarget::toy
