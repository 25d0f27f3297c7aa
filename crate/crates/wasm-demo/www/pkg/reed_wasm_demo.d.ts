/* tslint:disable */
/* eslint-disable */

/**
 * An interactive point mass driven from the page.
 */
export class PointMassDemo {
    free(): void;
    [Symbol.dispose](): void;
    arena(): number;
    done(): boolean;
    episode_return(): number;
    constructor(seed: number);
    /**
     * `[px, py, vx, vy, gx, gy]`.
     */
    observation(): Float64Array;
    /**
     * Applies a force, returns the ground-truth reward (NaN once the episode is over).
     */
    step(fx: number, fy: number): number;
}

/**
 * `P[σ¹ ≻ σ²]` under the Bradley-Terry model, and the cross-entropy of `label`
 * ("first", "second" or "equal") against it.
 */
export function bradley_terry(return_first: number, return_second: number, label: string): Float64Array;

/**
 * Rolls out two constant forces from the same start and asks a simulated
 * teacher which segment it prefers. Returns JSON with both render traces.
 */
export function compare_forces(seed: number, style: string, first: Float64Array, second: Float64Array, len: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_pointmassdemo_free: (a: number, b: number) => void;
    readonly bradley_terry: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly compare_forces: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly pointmassdemo_arena: (a: number) => number;
    readonly pointmassdemo_done: (a: number) => number;
    readonly pointmassdemo_episode_return: (a: number) => number;
    readonly pointmassdemo_new: (a: number) => number;
    readonly pointmassdemo_observation: (a: number) => [number, number];
    readonly pointmassdemo_step: (a: number, b: number, c: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
