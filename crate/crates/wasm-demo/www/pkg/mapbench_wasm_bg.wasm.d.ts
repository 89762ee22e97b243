/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_exploreview_free: (a: number, b: number) => void;
export const errorSweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const explore: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const exploreview_height: (a: number) => number;
export const exploreview_pixels: (a: number) => [number, number];
export const exploreview_summary: (a: number) => [number, number];
export const exploreview_width: (a: number) => number;
export const fitReference: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
