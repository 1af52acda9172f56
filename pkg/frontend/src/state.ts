import type { Tag } from "./types.js";

/** Uncommitted expert tags over the presented frames.
 *
 * At most k anomaly tags and k normal tags may be active, and only frames
 * from the presented set can be tagged. Re-tagging with the same kind
 * removes the tag; switching kind re-tags (respecting the target cap).
 */
export class TagState {
  private tags = new Map<number, Tag>();

  constructor(
    public readonly k: number,
    private presented = new Set<number>(),
  ) {}

  setPresented(frameIds: number[]): void {
    this.presented = new Set(frameIds);
    for (const id of [...this.tags.keys()]) {
      if (!this.presented.has(id)) this.tags.delete(id);
    }
  }

  count(kind: Tag): number {
    let n = 0;
    for (const t of this.tags.values()) if (t === kind) n += 1;
    return n;
  }

  tagOf(frameId: number): Tag | null {
    return this.tags.get(frameId) ?? null;
  }

  /** Attempt to toggle a tag; returns whether the request was accepted. */
  toggle(frameId: number, kind: Tag): boolean {
    if (!this.presented.has(frameId)) return false;
    const current = this.tags.get(frameId);
    if (current === kind) {
      this.tags.delete(frameId);
      return true;
    }
    if (this.count(kind) >= this.k) return false; // cap reached
    this.tags.set(frameId, kind);
    return true;
  }

  selection(): { anomalies: number[]; normals: number[] } {
    const anomalies: number[] = [];
    const normals: number[] = [];
    for (const [id, t] of this.tags) (t === "anomaly" ? anomalies : normals).push(id);
    anomalies.sort((a, b) => a - b);
    normals.sort((a, b) => a - b);
    return { anomalies, normals };
  }

  get empty(): boolean {
    return this.tags.size === 0;
  }

  clear(): void {
    this.tags.clear();
  }
}
