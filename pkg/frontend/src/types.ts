// JSON shapes of the stylization service. Field names match the wire format.

export type StylizeMode = 'random' | 'text' | 'image' | 'wplus';

export interface HealthResponse {
    status: string;
}

export interface ModelsResponse {
    models: string[];
}

export interface StylizeRequest {
    image: string; // base64 PNG of the source face
    mode: StylizeMode;
    seed?: number;
    model_id?: string;
    prompt?: string;
    reference_image?: string;
    wplus_id?: string;
}

export interface StylizeResponse {
    image: string; // base64 PNG
    wplus_id: string;
}

export interface InterpolateRequest {
    image: string;
    wplus_a: string;
    wplus_b: string;
    alphas: number[];
    model_id?: string;
}

export interface InterpolateResponse {
    images: string[];
}

export type FinetuneMode = 'zero' | 'one';

export interface FinetuneRequest {
    mode: FinetuneMode;
    base_model_id?: string;
    iterations?: number;
    seed?: number;
    prompt?: string;
    reference_image?: string;
    projection_token_subsample?: number;
}

export interface FinetuneResponse {
    job_id: string;
}

export type JobStatus = 'queued' | 'running' | 'done' | 'failed';

export interface JobProgress {
    step: number;
    total: number;
}

export interface JobRecord {
    job_id: string;
    kind: string;
    status: JobStatus;
    progress: JobProgress;
    base_model_id: string;
    result_model_id: string | null;
    loss_trace: number[];
    error: string | null;
}

// A style the user pinned from a stylize result: the server-side w+ handle
// plus the rendered image kept as a thumbnail.
export interface PinnedStyle {
    wplusId: string;
    thumbnail: string;
    label: string;
}
