/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const counterexample: (a: number) => [number, number];
export const qubit_pair: (a: number, b: number) => [number, number];
export const steering: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
