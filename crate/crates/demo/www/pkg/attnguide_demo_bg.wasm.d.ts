/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_session_free: (a: number, b: number) => void;
export const generate_task: (a: number) => [number, number];
export const session_decode: (a: number, b: number, c: number) => [number, number, number, number];
export const session_new: (a: number, b: number, c: number, d: number) => number;
export const session_task: (a: number) => [number, number];
export const session_train_epoch: (a: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
