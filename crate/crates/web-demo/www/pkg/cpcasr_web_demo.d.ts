/* tslint:disable */
/* eslint-disable */

export class ErrorRate {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly n_edits: number;
    readonly n_ref_phones: number;
    readonly per: number;
    /**
     * Edit distance of each line pair.
     */
    readonly per_line: Uint32Array;
}

/**
 * Per-frame label posteriors `[n_frames, n_classes]`, class 0 is blank.
 */
export class Lattice {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly greedy: string;
    readonly loss: number;
    readonly n_classes: number;
    readonly n_frames: number;
    readonly posteriors: Float64Array;
    readonly probs: Float64Array;
}

/**
 * Row-major `[n_frames, n_mels]` log-mel energies plus the phone transcript.
 */
export class Spectrogram {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly data: Float64Array;
    readonly n_frames: number;
    readonly n_mels: number;
    readonly transcript: string;
}

/**
 * CTC loss and posteriors for random frame distributions. `sharpness`
 * scales the logits, so larger values give peakier distributions.
 */
export function ctc_lattice(n_frames: number, n_classes: number, targets: string, seed: number, sharpness: number): Lattice;

/**
 * Corpus-level PER of line-aligned, space-separated transcripts.
 */
export function phone_error_rate(references: string, hypotheses: string): ErrorRate;

/**
 * Renders one synthetic utterance and its log-mel spectrogram.
 */
export function synth_log_mel(seed: number, n_phones: number, noise_std: number): Spectrogram;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_errorrate_free: (a: number, b: number) => void;
    readonly __wbg_lattice_free: (a: number, b: number) => void;
    readonly __wbg_spectrogram_free: (a: number, b: number) => void;
    readonly ctc_lattice: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly errorrate_n_edits: (a: number) => number;
    readonly errorrate_n_ref_phones: (a: number) => number;
    readonly errorrate_per: (a: number) => number;
    readonly errorrate_per_line: (a: number) => [number, number];
    readonly lattice_greedy: (a: number) => [number, number];
    readonly lattice_loss: (a: number) => number;
    readonly lattice_n_classes: (a: number) => number;
    readonly lattice_n_frames: (a: number) => number;
    readonly lattice_posteriors: (a: number) => [number, number];
    readonly lattice_probs: (a: number) => [number, number];
    readonly phone_error_rate: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly spectrogram_data: (a: number) => [number, number];
    readonly spectrogram_n_frames: (a: number) => number;
    readonly spectrogram_n_mels: (a: number) => number;
    readonly spectrogram_transcript: (a: number) => [number, number];
    readonly synth_log_mel: (a: number, b: number, c: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
