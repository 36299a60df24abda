/** DOM wiring: controls on the left, rendered frame on the right.
 *
 * All interaction funnels into one ViewerState; the RenderLoop owns
 * scheduling so dragging and slider scrubbing stay responsive while the
 * server renders at its own pace.
 */

import { RenderClient } from './api.js';
import { RenderLoop } from './loop.js';
import {
  initialState,
  QUALITIES,
  Quality,
  RenderMode,
  renderRequest,
  ViewerState,
} from './state.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const client = new RenderClient('');
const frame = el<HTMLImageElement>('frame');
const banner = el<HTMLDivElement>('banner');
const envPicker = el<HTMLSelectElement>('env');
const modePicker = el<HTMLSelectElement>('mode');
const qualityPicker = el<HTMLSelectElement>('quality');
const spinner = el<HTMLSpanElement>('spinner');

let state: ViewerState = initialState();
let frameUrl: string | null = null;

const loop = new RenderLoop({
  render: (s) => client.render(renderRequest(s)),
  onFrame: (png) => {
    banner.hidden = true;
    const url = URL.createObjectURL(new Blob([png], { type: 'image/png' }));
    frame.src = url;
    if (frameUrl) URL.revokeObjectURL(frameUrl);
    frameUrl = url;
  },
  onError: (message) => {
    banner.hidden = false;
    banner.textContent = message;
  },
});

function apply(change: Partial<ViewerState>): void {
  state = { ...state, ...change };
  spinner.hidden = false;
  loop.update(state);
}

setInterval(() => {
  spinner.hidden = !loop.inFlight;
}, 100);

function bindSlider(id: string, set: (v: number) => Partial<ViewerState>): void {
  const input = el<HTMLInputElement>(id);
  input.addEventListener('input', () => apply(set(Number(input.value))));
}

bindSlider('d-rough', (v) => ({ deltaRoughness: v }));
bindSlider('d-metal', (v) => ({ deltaMetallic: v }));
bindSlider('tint-r', (v) => ({ albedoTint: [v, state.albedoTint[1], state.albedoTint[2]] }));
bindSlider('tint-g', (v) => ({ albedoTint: [state.albedoTint[0], v, state.albedoTint[2]] }));
bindSlider('tint-b', (v) => ({ albedoTint: [state.albedoTint[0], state.albedoTint[1], v] }));

modePicker.addEventListener('change', () => {
  apply({ mode: modePicker.value as RenderMode });
});
qualityPicker.addEventListener('change', () => {
  apply({ quality: Number(qualityPicker.value) as Quality });
});
envPicker.addEventListener('change', () => {
  apply({ env: envPicker.value });
});

function addEnvOption(id: string, select = false): void {
  const option = document.createElement('option');
  option.value = id;
  option.textContent = id;
  envPicker.appendChild(option);
  if (select) envPicker.value = id;
}

el<HTMLInputElement>('env-file').addEventListener('change', async (event) => {
  const input = event.target as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) return;
  try {
    const info = await client.uploadEnv(new Uint8Array(await file.arrayBuffer()));
    addEnvOption(info.id, true);
    banner.hidden = true;
    apply({ env: info.id });
  } catch (err) {
    banner.hidden = false;
    banner.textContent = err instanceof Error ? err.message : String(err);
  } finally {
    input.value = '';
  }
});

// Orbit: drag rotates, wheel zooms.
frame.addEventListener('pointerdown', (down) => {
  down.preventDefault();
  const start = { ...state.orbit };
  const move = (ev: PointerEvent) => {
    apply({
      orbit: {
        ...state.orbit,
        azimuth: start.azimuth - (ev.clientX - down.clientX) * 0.01,
        elevation: start.elevation + (ev.clientY - down.clientY) * 0.01,
      },
    });
  };
  const up = () => {
    window.removeEventListener('pointermove', move);
    window.removeEventListener('pointerup', up);
  };
  window.addEventListener('pointermove', move);
  window.addEventListener('pointerup', up);
});
frame.addEventListener('wheel', (ev) => {
  ev.preventDefault();
  apply({
    orbit: {
      ...state.orbit,
      distance: state.orbit.distance * Math.exp(ev.deltaY * 0.001),
    },
  });
});

async function start(): Promise<void> {
  for (const q of QUALITIES) {
    const option = document.createElement('option');
    option.value = String(q);
    option.textContent = `${q} px`;
    qualityPicker.appendChild(option);
  }
  qualityPicker.value = String(state.quality);
  try {
    const meta = await client.meta();
    for (const mode of meta.modes) {
      const option = document.createElement('option');
      option.value = mode;
      option.textContent = mode;
      modePicker.appendChild(option);
    }
    modePicker.value = state.mode;
    for (const id of meta.envs) addEnvOption(id);
    envPicker.value = state.env;
    state = {
      ...state,
      orbit: {
        ...state.orbit,
        target: meta.bounds.center,
        distance: meta.bounds.radius * 3.2,
      },
    };
  } catch (err) {
    banner.hidden = false;
    banner.textContent = err instanceof Error ? err.message : String(err);
  }
  apply({});
}

void start();
