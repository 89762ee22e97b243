/* tslint:disable */
/* eslint-disable */

/**
 * Map, skeleton and traversal path of a synthetic layout.
 */
export class ExploreView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * RGBA pixels for an `ImageData`.
     */
    pixels(): Uint8Array;
    /**
     * Features as JSON.
     */
    summary(): string;
    readonly height: number;
    readonly width: number;
}

/**
 * Pair-error statistics of a simulated run, as JSON.
 */
export function errorSweep(steps: number, trans_per_m: number, rot_per_m: number, seed: number, bins: number): string;

export function explore(kind: string, width: number, height: number, rooms: number, sensor_range: number): ExploreView;

/**
 * Regression fit and cross-validation on the reference data, as JSON.
 */
export function fitReference(system: string, target: string, model: string, folds: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_exploreview_free: (a: number, b: number) => void;
    readonly errorSweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly explore: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly exploreview_height: (a: number) => number;
    readonly exploreview_pixels: (a: number) => [number, number];
    readonly exploreview_summary: (a: number) => [number, number];
    readonly exploreview_width: (a: number) => number;
    readonly fitReference: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
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
