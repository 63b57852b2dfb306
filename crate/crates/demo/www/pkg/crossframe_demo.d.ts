/* tslint:disable */
/* eslint-disable */

export function classLabel(class_id: number): string;

export function costCsv(frames: string, patches: number, dim: number, heads: number, layers: number): string;

export function renderClip(class_id: number, index: number, seed: number, frames: number, size: number): Uint8Array;

/**
 * `stride` 0 selects sparse sampling.
 */
export function sampleIndices(source: number, frames: number, stride: number, deterministic: boolean, seed: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly classLabel: (a: number) => [number, number, number, number];
    readonly costCsv: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly renderClip: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly sampleIndices: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
