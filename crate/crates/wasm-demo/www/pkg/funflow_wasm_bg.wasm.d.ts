/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const flmf_surface: (a: number, b: number, c: number, d: number) => [number, number];
export const flms_demo: (a: number, b: number, c: number) => [number, number];
export const smooth_demo: (a: number, b: number, c: number, d: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
