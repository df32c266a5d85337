/** Typed client for the completion service.
 *
 * The UI never does model math: logprobs and probabilities are carried to
 * the DOM as the exact digit strings the service sent. To preserve them we
 * quote those numeric fields in the raw response text before JSON.parse,
 * so float parsing happens only where geometry needs a number.
 */

export interface Health {
  status: string;
  model_version: string;
}

export interface ImageInfo {
  id: string;
  instances: string[];
}

export interface Completion {
  text: string;
  /** Wire-exact digits, e.g. "-1.3862943611198906". */
  logprob: string;
  rank: number;
}

export interface InstanceProb {
  label: string;
  /** Wire-exact digits, e.g. "0.9973241".  */
  p: string;
  /** Parsed copy of `p`; used only for bar geometry and the threshold test. */
  value: number;
}

export interface InstancesResult {
  probs: InstanceProb[];
  threshold: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** `"noise"` selects the seeded pseudo-image context on the service side. */
export const NOISE_ID = "noise";

const NUMBER = /-?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+)?/;

/** Wrap the values of the named keys in quotes so JSON.parse keeps their
 * digits as strings. Safe on our payloads: a bare `"key":` sequence cannot
 * occur inside a JSON string value (interior quotes arrive escaped). */
export function quoteNumericFields(text: string, keys: string[]): string {
  const pattern = new RegExp(
    `"(${keys.join("|")})":(${NUMBER.source})`,
    "g",
  );
  return text.replace(pattern, '"$1":"$2"');
}

interface RawCompletion {
  text: string;
  logprob: string;
  rank: number;
}

interface RawInstanceProb {
  class: string;
  p: string;
}

export class Client {
  constructor(
    readonly base: string,
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request(
    path: string,
    init: RequestInit,
    signal?: AbortSignal,
  ): Promise<string> {
    const resp = await this.fetchFn(this.base + path, { ...init, signal });
    const text = await resp.text();
    if (!resp.ok) {
      let code = "error";
      let message = text;
      try {
        const body = JSON.parse(text) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body; keep raw text as the message
      }
      throw new ApiError(resp.status, code, message);
    }
    return text;
  }

  private post(path: string, body: unknown, signal?: AbortSignal): Promise<string> {
    return this.request(
      path,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
      signal,
    );
  }

  async health(): Promise<Health> {
    return JSON.parse(await this.request("/health", { method: "GET" })) as Health;
  }

  async images(): Promise<ImageInfo[]> {
    const body = JSON.parse(await this.request("/images", { method: "GET" })) as {
      images: ImageInfo[];
    };
    return body.images;
  }

  async complete(
    prefix: string,
    imageId: string,
    opts: { width?: number; k?: number; signal?: AbortSignal } = {},
  ): Promise<Completion[]> {
    const payload: Record<string, unknown> = { prefix, image_id: imageId };
    if (opts.width !== undefined) payload.width = opts.width;
    if (opts.k !== undefined) payload.k = opts.k;
    const text = await this.post("/complete", payload, opts.signal);
    const body = JSON.parse(quoteNumericFields(text, ["logprob"])) as {
      completions: RawCompletion[];
    };
    return body.completions.map((c) => ({
      text: c.text,
      logprob: c.logprob,
      rank: c.rank,
    }));
  }

  async instances(
    query: string,
    opts: { top?: number; signal?: AbortSignal } = {},
  ): Promise<InstancesResult> {
    const payload: Record<string, unknown> = { query };
    if (opts.top !== undefined) payload.top = opts.top;
    const text = await this.post("/instances", payload, opts.signal);
    const body = JSON.parse(quoteNumericFields(text, ["p"])) as {
      probs: RawInstanceProb[];
      threshold_used: number;
    };
    return {
      probs: body.probs.map((e) => ({
        label: e.class,
        p: e.p,
        value: Number(e.p),
      })),
      threshold: body.threshold_used,
    };
  }
}
