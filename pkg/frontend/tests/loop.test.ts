import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { RenderLoop } from '../src/loop.js';
import { initialState, ViewerState } from '../src/state.js';

interface Gate {
  promise: Promise<Uint8Array>;
  resolve: (frame: Uint8Array) => void;
  reject: (err: Error) => void;
}

function gate(): Gate {
  let resolve!: (frame: Uint8Array) => void;
  let reject!: (err: Error) => void;
  const promise = new Promise<Uint8Array>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

/** Loop under test with hand-resolved render promises. */
function harness(debounceMs?: number) {
  const requests: ViewerState[] = [];
  const gates: Gate[] = [];
  const frames: Uint8Array[] = [];
  const errors: string[] = [];
  const loop = new RenderLoop({
    render: (state) => {
      requests.push(state);
      const g = gate();
      gates.push(g);
      return g.promise;
    },
    onFrame: (frame) => frames.push(frame),
    onError: (message) => errors.push(message),
    debounceMs,
  });
  return { loop, requests, gates, frames, errors };
}

function withEnv(env: string): ViewerState {
  return { ...initialState(), env };
}

async function flushMicrotasks(): Promise<void> {
  for (let i = 0; i < 10; i += 1) await Promise.resolve();
}

beforeEach(() => {
  vi.useFakeTimers();
});
afterEach(() => {
  vi.useRealTimers();
});

describe('RenderLoop', () => {
  it('waits out the debounce before requesting', () => {
    const h = harness();
    h.loop.update(withEnv('a'));
    vi.advanceTimersByTime(149);
    expect(h.requests).toHaveLength(0);
    vi.advanceTimersByTime(1);
    expect(h.requests).toHaveLength(1);
  });

  it('coalesces rapid updates into one request for the last state', () => {
    const h = harness();
    h.loop.update(withEnv('a'));
    vi.advanceTimersByTime(60);
    h.loop.update(withEnv('b'));
    vi.advanceTimersByTime(60);
    h.loop.update(withEnv('c'));
    vi.advanceTimersByTime(150);
    expect(h.requests).toHaveLength(1);
    expect(h.requests[0].env).toBe('c');
  });

  it('never displays a stale response and rerenders the newest state', async () => {
    const h = harness();
    const frameA = new Uint8Array([1]);
    const frameB = new Uint8Array([2]);

    h.loop.update(withEnv('a'));
    vi.advanceTimersByTime(150);
    expect(h.requests).toHaveLength(1);

    // A newer state arrives while the first request is still in flight:
    // no second fetch yet, the loop keeps exactly one outstanding.
    h.loop.update(withEnv('b'));
    vi.advanceTimersByTime(150);
    expect(h.requests).toHaveLength(1);

    // The slow first response lands after it was superseded: dropped.
    h.gates[0].resolve(frameA);
    await flushMicrotasks();
    expect(h.frames).toHaveLength(0);
    expect(h.requests).toHaveLength(2);
    expect(h.requests[1].env).toBe('b');

    h.gates[1].resolve(frameB);
    await flushMicrotasks();
    expect(h.frames).toEqual([frameB]);
    expect(h.errors).toHaveLength(0);
  });

  it('keeps the last good frame when a request fails', async () => {
    const h = harness();
    const frameA = new Uint8Array([1]);
    const frameC = new Uint8Array([3]);

    h.loop.update(withEnv('a'));
    vi.advanceTimersByTime(150);
    h.gates[0].resolve(frameA);
    await flushMicrotasks();
    expect(h.frames).toEqual([frameA]);

    h.loop.update(withEnv('b'));
    vi.advanceTimersByTime(150);
    h.gates[1].reject(new Error('render failed (500)'));
    await flushMicrotasks();
    expect(h.errors).toEqual(['render failed (500)']);
    expect(h.frames).toEqual([frameA]);

    // The loop recovers: the next update renders normally.
    h.loop.update(withEnv('c'));
    vi.advanceTimersByTime(150);
    h.gates[2].resolve(frameC);
    await flushMicrotasks();
    expect(h.frames).toEqual([frameA, frameC]);
  });

  it('reports in-flight status', async () => {
    const h = harness();
    expect(h.loop.inFlight).toBe(false);
    h.loop.update(withEnv('a'));
    vi.advanceTimersByTime(150);
    expect(h.loop.inFlight).toBe(true);
    h.gates[0].resolve(new Uint8Array([1]));
    await flushMicrotasks();
    expect(h.loop.inFlight).toBe(false);
  });

  it('honors a custom debounce window', () => {
    const h = harness(10);
    h.loop.update(withEnv('a'));
    vi.advanceTimersByTime(9);
    expect(h.requests).toHaveLength(0);
    vi.advanceTimersByTime(1);
    expect(h.requests).toHaveLength(1);
  });
});
