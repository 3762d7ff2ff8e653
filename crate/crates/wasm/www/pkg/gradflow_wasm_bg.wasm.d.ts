/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const degreeSweep: (a: number, b: number, c: number) => [number, number, number, number];
export const growthCurves: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const maxMarginTrajectory: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
