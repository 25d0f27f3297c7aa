/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_pointmassdemo_free: (a: number, b: number) => void;
export const bradley_terry: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const compare_forces: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const pointmassdemo_arena: (a: number) => number;
export const pointmassdemo_done: (a: number) => number;
export const pointmassdemo_episode_return: (a: number) => number;
export const pointmassdemo_new: (a: number) => number;
export const pointmassdemo_observation: (a: number) => [number, number];
export const pointmassdemo_step: (a: number, b: number, c: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
