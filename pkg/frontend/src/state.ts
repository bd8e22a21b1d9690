/** Query state plus the stale-response guard. */

import type { ImageHit } from "./api.js";

export const K_MIN = 1;
export const K_MAX = 50;

export interface QueryState {
  text: string;
  lang: string;
  k: number;
  languages: string[];
  results: ImageHit[] | null;
  heatmapAvailable: boolean;
  selectedImage: string | null;
  selectedWord: string;
  heatmap: number[][] | null;
  error: string | null;
  pending: boolean;
}

export function initialState(): QueryState {
  return {
    text: "",
    lang: "",
    k: 10,
    languages: [],
    results: null,
    heatmapAvailable: false,
    selectedImage: null,
    selectedWord: "",
    heatmap: null,
    error: null,
    pending: false,
  };
}

export function clampK(k: number): number {
  if (!Number.isFinite(k)) return 10;
  return Math.min(K_MAX, Math.max(K_MIN, Math.round(k)));
}

/** Only one in-flight query counts; anything older is discarded on arrival. */
export class RequestGate {
  private counter = 0;

  next(): number {
    this.counter += 1;
    return this.counter;
  }

  isCurrent(seq: number): boolean {
    return seq === this.counter;
  }
}
