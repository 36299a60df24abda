/** Thin typed client for the render service HTTP API. */

import { RenderRequest } from './state.js';

export interface SceneMeta {
  num_gaussians: number;
  bounds: { center: [number, number, number]; radius: number };
  env_resolution: [number, number];
  modes: string[];
  envs: string[];
}

export interface EnvInfo {
  id: string;
  width: number;
  height: number;
}

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

async function fail(res: Response, what: string): Promise<never> {
  let detail = `${res.status}`;
  try {
    const body = (await res.json()) as { detail?: string };
    if (body.detail) detail = `${res.status}: ${body.detail}`;
  } catch {
    // non-JSON error body; status alone will do
  }
  throw new Error(`${what} failed (${detail})`);
}

export class RenderClient {
  constructor(
    private baseUrl: string = '',
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async meta(): Promise<SceneMeta> {
    const res = await this.fetchFn(`${this.baseUrl}/scene/meta`);
    if (!res.ok) await fail(res, 'meta');
    return (await res.json()) as SceneMeta;
  }

  async render(body: RenderRequest): Promise<Uint8Array<ArrayBuffer>> {
    const res = await this.fetchFn(`${this.baseUrl}/render`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!res.ok) await fail(res, 'render');
    return new Uint8Array(await res.arrayBuffer());
  }

  async uploadEnv(hdrBytes: Uint8Array<ArrayBuffer>): Promise<EnvInfo> {
    const res = await this.fetchFn(`${this.baseUrl}/env`, {
      method: 'POST',
      headers: { 'content-type': 'application/octet-stream' },
      body: hdrBytes,
    });
    if (!res.ok) await fail(res, 'env upload');
    return (await res.json()) as EnvInfo;
  }

  async envs(): Promise<EnvInfo[]> {
    const res = await this.fetchFn(`${this.baseUrl}/envs`);
    if (!res.ok) await fail(res, 'env listing');
    return ((await res.json()) as { envs: EnvInfo[] }).envs;
  }
}
