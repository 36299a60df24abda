/** Viewer state and its translation into render requests.
 *
 * The request body mirrors the service schema exactly: material edits ride
 * as `overrides` (delta roughness / delta metallic / albedo tint), the
 * quality dropdown sets the square output resolution, and the orbit camera
 * becomes the `pose` document.
 */

import { Orbit, Pose, poseFromOrbit, Vec3 } from './orbit.js';

export type RenderMode =
  | 'shaded'
  | 'albedo'
  | 'roughness'
  | 'metallic'
  | 'normal'
  | 'depth';

export const QUALITIES = [256, 512, 768] as const;
export type Quality = (typeof QUALITIES)[number];

export interface ViewerState {
  orbit: Orbit;
  env: string;
  mode: RenderMode;
  quality: Quality;
  fovX: number;
  deltaRoughness: number;
  deltaMetallic: number;
  albedoTint: Vec3;
}

export interface RenderRequest {
  pose: Pose;
  mode: RenderMode;
  env: string;
  overrides: {
    delta_roughness: number;
    delta_metallic: number;
    albedo_tint: Vec3;
  };
}

export function initialState(): ViewerState {
  return {
    orbit: { azimuth: 0.6, elevation: 0.35, distance: 3.2, target: [0, 0, 0] },
    env: 'default',
    mode: 'shaded',
    quality: 256,
    fovX: 0.7,
    deltaRoughness: 0,
    deltaMetallic: 0,
    albedoTint: [1, 1, 1],
  };
}

function clip(x: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, x));
}

/** Clamp sliders and orbit ranges; returns a new state, input untouched. */
export function clampState(state: ViewerState): ViewerState {
  return {
    ...state,
    orbit: {
      ...state.orbit,
      elevation: clip(state.orbit.elevation, -Math.PI / 2, Math.PI / 2),
      distance: Math.max(1e-3, state.orbit.distance),
      target: [...state.orbit.target] as Vec3,
    },
    deltaRoughness: clip(state.deltaRoughness, -1, 1),
    deltaMetallic: clip(state.deltaMetallic, -1, 1),
    albedoTint: state.albedoTint.map((c) => clip(c, 0, 1)) as Vec3,
  };
}

export function renderRequest(state: ViewerState): RenderRequest {
  const s = clampState(state);
  return {
    pose: poseFromOrbit(s.orbit, s.fovX, s.quality, s.quality),
    mode: s.mode,
    env: s.env,
    overrides: {
      delta_roughness: s.deltaRoughness,
      delta_metallic: s.deltaMetallic,
      albedo_tint: [...s.albedoTint] as Vec3,
    },
  };
}
