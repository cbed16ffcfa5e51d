/* tslint:disable */
/* eslint-disable */

/**
 * The demo block's surfaces as JSON, for drawing.
 */
export function demoScene(): string;

/**
 * `{"zone", "hemisphere", "easting", "northing"}` as JSON.
 */
export function latlonToUtm(lat: number, lon: number): string;

export function triangulate(xy: Float64Array): Uint32Array;

export function visibleSurfaces(x: number, y: number, z: number, yaw: number, pitch: number, roll: number, hfov: number, far: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly demoScene: () => [number, number];
    readonly latlonToUtm: (a: number, b: number) => [number, number, number, number];
    readonly triangulate: (a: number, b: number) => [number, number, number, number];
    readonly visibleSurfaces: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
