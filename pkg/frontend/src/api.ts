/** Typed client for the image-search service's JSON API. */

export interface ImageHit {
  image_id: string;
  score: number;
}

export interface CaptionHit {
  caption_id: string;
  text: string;
  lang: string;
  score: number;
}

export interface TextQueryResponse {
  results: ImageHit[];
  heatmap_available: boolean;
}

export interface ServiceInfo {
  languages: string[];
  joint_dim: number;
  image_count: number;
  caption_count: number;
  default_k: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let code = "http_error";
  let detail = `${resp.status}`;
  try {
    const body = (await resp.json()) as { error?: string; detail?: string };
    code = body.error ?? code;
    detail = body.detail ?? detail;
  } catch {
    // non-JSON error body: keep the status text
  }
  throw new ApiError(resp.status, code, detail);
}

export class ApiClient {
  constructor(
    public readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async info(): Promise<ServiceInfo> {
    return parseOrThrow(await this.fetchFn(this.url("/info")));
  }

  async queryText(text: string, lang: string, k: number): Promise<TextQueryResponse> {
    const resp = await this.fetchFn(this.url("/query/text"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text, lang, k }),
    });
    return parseOrThrow(resp);
  }

  async heatmap(word: string, lang: string, imageId: string): Promise<number[][]> {
    const params = new URLSearchParams({ word, lang, image_id: imageId });
    return parseOrThrow(await this.fetchFn(this.url(`/heatmap?${params}`)));
  }

  async indexImage(imageId: string, featurePath: string): Promise<{ indexed: boolean; count: number }> {
    const resp = await this.fetchFn(this.url("/index/images"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image_id: imageId, feature_path: featurePath }),
    });
    return parseOrThrow(resp);
  }
}
