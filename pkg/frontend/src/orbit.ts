/** Orbit camera parameters and their mapping to the service pose schema.
 *
 * Convention: azimuth 0 / elevation 0 places the eye on the +z axis at
 * `distance` from the target; positive elevation raises the eye toward +y.
 * The up vector follows the elevation derivative so it stays valid at the
 * poles instead of degenerating against the view direction.
 */

export type Vec3 = [number, number, number];

export interface Orbit {
  azimuth: number;
  elevation: number;
  distance: number;
  target: Vec3;
}

export interface Pose {
  eye: Vec3;
  target: Vec3;
  up: Vec3;
  camera_angle_x: number;
  width: number;
  height: number;
}

function norm(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function poseFromOrbit(
  orbit: Orbit,
  fovX: number,
  width: number,
  height: number,
): Pose {
  if (!(orbit.distance > 0)) {
    throw new Error('orbit distance must be positive');
  }
  const ca = Math.cos(orbit.azimuth);
  const sa = Math.sin(orbit.azimuth);
  const ce = Math.cos(orbit.elevation);
  const se = Math.sin(orbit.elevation);
  const offset: Vec3 = [sa * ce, se, ca * ce];
  const eye: Vec3 = [
    orbit.target[0] + orbit.distance * offset[0],
    orbit.target[1] + orbit.distance * offset[1],
    orbit.target[2] + orbit.distance * offset[2],
  ];
  // d(eye)/d(elevation): tangent along the meridian, always unit-normable.
  const up = norm([-sa * se, ce, -ca * se]);
  return {
    eye,
    target: [...orbit.target] as Vec3,
    up,
    camera_angle_x: fovX,
    width,
    height,
  };
}

export function orbitFromPose(pose: Pose): Orbit {
  const v: Vec3 = [
    pose.eye[0] - pose.target[0],
    pose.eye[1] - pose.target[1],
    pose.eye[2] - pose.target[2],
  ];
  const distance = Math.hypot(v[0], v[1], v[2]);
  if (!(distance > 0)) {
    throw new Error('pose eye coincides with target');
  }
  const elevation = Math.asin(Math.min(1, Math.max(-1, v[1] / distance)));
  const azimuth = Math.atan2(v[0], v[2]);
  return {
    azimuth,
    elevation,
    distance,
    target: [...pose.target] as Vec3,
  };
}
