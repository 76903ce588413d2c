/* tslint:disable */
/* eslint-disable */

/**
 * Electrons (1-based) linked to electron 1 through the selected pairs,
 * given as a flat list `[j₁, k₁, j₂, k₂, …]`.
 */
export function cluster_of(electrons: number, pairs: Uint32Array): Uint32Array;

/**
 * `[t, χ₁(t), χ₂(t)]` triples for `t ∈ [0, 1.25·R/(2N)]`.
 */
export function cutoff_curve(radius: number, electrons: number, points: number): Float64Array;

/**
 * `[r, ρ(r ẑ), std_error]` triples for `r ∈ [0, r_max]`, all points sharing
 * one set of Monte-Carlo draws. `b` is ignored for the hydrogenic family.
 */
export function radial_density(family: string, a: number, b: number, electrons: number, r_max: number, points: number, samples: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly cluster_of: (a: number, b: number, c: number) => [number, number, number, number];
    readonly cutoff_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly radial_density: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
