import type { FramePayload, History, RankedItem, SaliencyPayload, Status } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}>;

/** Non-2xx responses carry the service's own message so the UI can surface
 * conflicts (409) verbatim. */
export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    const body = (await res.json().catch(() => ({}))) as Record<string, unknown>;
    if (!res.ok) {
      const detail = typeof body.detail === "string" ? body.detail : `HTTP ${res.status}`;
      throw new ApiError(res.status, detail);
    }
    return body as T;
  }

  getStatus(): Promise<Status> {
    return this.request<Status>("/status");
  }

  getRanking(top: number): Promise<RankedItem[]> {
    return this.request<RankedItem[]>(`/ranking?top=${top}`);
  }

  getFrame(id: number): Promise<FramePayload> {
    return this.request<FramePayload>(`/frame/${id}`);
  }

  getSaliency(id: number): Promise<SaliencyPayload> {
    return this.request<SaliencyPayload>(`/frame/${id}/saliency`);
  }

  getHistory(): Promise<History> {
    return this.request<History>("/history");
  }

  postFeedback(anomalies: number[], normals: number[]): Promise<{ round: number }> {
    return this.request<{ round: number }>("/feedback", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ anomalies, normals }),
    });
  }

  postReset(): Promise<{ round: number }> {
    return this.request<{ round: number }>("/reset", { method: "POST" });
  }
}
